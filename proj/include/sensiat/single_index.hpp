#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sensiat/common.hpp"
#include "sensiat/kernels.hpp"
#include "sensiat/trial_data.hpp"

namespace sensiat {

// One term of the outcome formula: raw variable, ns(var, df=k) or scale(var).
struct OutcomeTerm {
  enum class Kind { Raw, NaturalSpline, Scale };
  Kind kind = Kind::Raw;
  std::string var;
  int df = 3;  // NaturalSpline only

  std::string to_string() const;
  bool operator==(const OutcomeTerm&) const = default;
};

struct OutcomeFormula {
  std::vector<OutcomeTerm> terms;

  // `outcome ~ ns(prev_outcome, df=3) + scale(time) + scale(delta_time)`
  static OutcomeFormula parse(const std::string& text);
  static OutcomeFormula defaults();
  // modification string: terms prefixed with + or -, e.g.
  // "- ns(prev_outcome, df=3) - scale(time) - scale(delta_time) + prev_outcome + time + delta_time"
  OutcomeFormula modified(const std::string& mods) const;
  std::string to_string() const;
};

// Formula with transform constants frozen from the training data.
struct OutcomeModelSpec {
  OutcomeFormula formula;
  struct FrozenTerm {
    OutcomeTerm term;
    double center = 0.0, scale = 1.0;   // Scale terms
    std::vector<double> ns_knots;        // NaturalSpline terms (boundary first/last)
  };
  std::vector<FrozenTerm> frozen;
  std::vector<std::string> colnames;
  int dim = 0;

  // Predictor vector for one (prev_outcome, time, delta_time, covariates) state.
  Eigen::VectorXd predictors(double prev_outcome, double time, double delta_time,
                             const std::map<std::string, double>& num_cov) const;
};

// Natural cubic spline basis (linear beyond the boundary knots); `knots`
// includes the boundary knots; returns knots.size()-1 values.
std::vector<double> natural_spline_basis(const std::vector<double>& knots, double x);

struct OutcomeDesign {
  Eigen::MatrixXd X;          // rows sorted by ascending Y
  Eigen::VectorXd Y;
  std::vector<int> subject;   // subject index per row
  int n_subjects = 0;
  OutcomeModelSpec spec;
};

// Builds the design from event rows; freezes transforms from the same rows.
OutcomeDesign build_outcome_design(const TrialFrame& frame,
                                   const std::vector<CountingProcessRecord>& cp,
                                   const OutcomeFormula& formula);

// Leave-one-subject-out pseudo sum of integrated squared error.
double psis(const Eigen::VectorXd& theta, double h, const OutcomeDesign& design,
            Kernel kernel);

// Outer-product-of-gradients initial direction (unit norm, sign-fixed).
Eigen::VectorXd init_direction(const OutcomeDesign& design);

enum class SIMode { FixedCoef, FixedBandwidth, Norm1 };
enum class BwMethod { BoundedQuasiNewton, GoldenSection, Grid };

struct SingleIndexOptions {
  Kernel kernel = Kernel::Gaussian;
  double abs_tol = 1e-7;             // Nelder-Mead absolute tolerance
  int max_evals = 2000;
  BwMethod bw_method = BwMethod::BoundedQuasiNewton;
  double bw_lo = 0.01, bw_hi = 1.5;  // h* range, Norm1 mode
  std::optional<Eigen::VectorXd> theta_start;  // overrides the OPG initializer
  std::optional<double> h_start;
};

struct SingleIndexFit {
  Eigen::VectorXd theta;
  double h = 1.0;
  double hstar = kMissing;  // h as a multiple of sd(X'theta); Norm1 mode only
  Kernel kernel = Kernel::Gaussian;
  SIMode mode = SIMode::FixedCoef;

  OutcomeModelSpec spec;
  Eigen::VectorXd train_y;      // ascending
  Eigen::VectorXd train_index;  // X'theta, same order
  std::vector<int> train_subject;

  int evaluations = 0;
  double final_psis = 0.0;
  bool converged = false;
  std::vector<double> trace;  // accepted PSIS values, outer iterations
};

SingleIndexFit fit_fixed_coef(const OutcomeDesign& design, const SingleIndexOptions& opts);
SingleIndexFit fit_fixed_bandwidth(const OutcomeDesign& design,
                                   const SingleIndexOptions& opts);
SingleIndexFit fit_norm1(const OutcomeDesign& design, const SingleIndexOptions& opts);

// Discrete conditional outcome distribution (NW weights over training rows).
struct ConditionalDistribution {
  std::vector<double> support;  // sorted distinct outcomes
  std::vector<double> weights;  // nonnegative, sum to 1
  bool fallback_used = false;

  double mean() const;
  double cdf(double z) const;
};

ConditionalDistribution nw_conditional_cdf(const SingleIndexFit& fit,
                                           const Eigen::VectorXd& x);

}  // namespace sensiat
