#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sensiat/common.hpp"
#include "sensiat/intensity.hpp"
#include "sensiat/quadrature.hpp"
#include "sensiat/single_index.hpp"
#include "sensiat/spline.hpp"
#include "sensiat/trial_data.hpp"

namespace sensiat {

// Exponential-tilting moments of a conditional outcome distribution.
struct TiltedMoments {
  double e_alpha = 1.0;      // E[e^{aY} | assessed, past]
  double ye_alpha = 0.0;     // E[Y e^{aY} | assessed, past]
  double tilted_mean = 0.0;  // ye_alpha / e_alpha
};

TiltedMoments tilted_moments(const ConditionalDistribution& dist, double alpha);
double tilted_variance(const ConditionalDistribution& dist, double alpha);
double rho(double lambda_val, const ConditionalDistribution& dist, double alpha, double y);

struct QuadratureOptions {
  QuadMethod method = QuadMethod::Adaptive;
  double tolerance = 1e-6;  // adaptive
  int resolution = 1000;    // fixed grid points across the whole interval
  std::optional<double> delta;  // fixed grid spacing; overrides resolution
};

struct EngineOptions {
  IntensityFormula intensity_formula = IntensityFormula::defaults();
  IntensityOptions intensity;
  OutcomeFormula outcome_formula = OutcomeFormula::defaults();
  SIMode mode = SIMode::FixedCoef;
  SingleIndexOptions outcome;
  std::vector<std::vector<double>> knot_sets;  // one spline basis per set
  int degree = 3;
  std::vector<double> alphas = {0.0};
  QuadratureOptions quad;
  int threads = 1;
  int jackknife_max_evals = 60;  // outcome-refit budget for warm-started replicates
};

// One arm's fitted pipeline plus everything needed to reconstruct and refit.
struct ArmModel {
  TrialFrame frame;
  std::vector<CountingProcessRecord> cp;
  IntensityDesign idesign;
  IntensityFit intensity;
  SingleIndexFit outcome;
  std::vector<SplineBasisSpec> bases;
  std::vector<Eigen::MatrixXd> gram;
  std::vector<double> alphas;
  // indexed [interval][alpha]; influence matrices are n_subjects x d
  std::vector<std::vector<Eigen::VectorXd>> beta;
  std::vector<std::vector<Eigen::MatrixXd>> term1;
  std::vector<std::vector<Eigen::MatrixXd>> term2;
  std::vector<std::vector<Eigen::MatrixXd>> beta_cov;
  EngineOptions options;

  int interval_for(double t) const;  // first basis whose range contains t, or -1
  int alpha_index(double alpha) const;
  double mean_at(double t, int alpha_idx) const;
  double if_var_at(double t, int alpha_idx) const;
};

struct SensitivityModel {
  ArmModel treatment;
  ArmModel control;
  std::string treatment_label;
};

// Observed-past state of one subject at time t (most recent assessment < t).
struct PastState {
  double prev_outcome = 0.0;
  double prev_time = 0.0;
  int visit = 1;        // stratum of an event occurring at t
  int record_index = 0; // index of the defining row in subject.rows
};

PastState past_state(const Subject& subject, double t);

// phi_1: sum over the subject's events inside the basis range of
// B(T)(Y - tilted_mean)/rho.
Eigen::VectorXd influence_term1(const TrialFrame& frame,
                                const std::vector<CountingProcessRecord>& cp,
                                const IntensityDesign& idesign,
                                const IntensityFit& intensity,
                                const SingleIndexFit& outcome,
                                const SplineBasisSpec& basis, int subject_index,
                                double alpha);

// phi_2: integral of B(t) * tilted_mean(t) over the basis range, split at the
// subject's assessment times and the interior knots.
Eigen::VectorXd influence_term2(const TrialFrame& frame, const SingleIndexFit& outcome,
                                const SplineBasisSpec& basis, int subject_index,
                                double alpha, const QuadratureOptions& quad);

// beta_hat = (1/n) V^{-1} sum_i phi_i, solved by Cholesky factorization.
Eigen::VectorXd estimate_beta(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& V);

ArmModel fit_arm(const TrialFrame& frame, const EngineOptions& opts);
SensitivityModel fit_model(const TrialFrame& frame, const std::string& treatment_label,
                           const EngineOptions& opts);

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void emit(std::ostream& out, char delimiter = ',') const;
};

// Rows (time, alpha, mean, var) over the full grid; var is the IF sandwich.
ResultTable predict_mean(const ArmModel& arm, const std::vector<double>& times);

// ((n-1)/n) * sum (x_i - x_bar)^2 over leave-one-out statistics.
double jackknife_variance(const std::vector<double>& loo_stats);

struct JackknifeReplicates {
  // replicate r: means[r](t_idx, alpha_idx); valid[r] false when the refit failed
  std::vector<Eigen::MatrixXd> means;
  std::vector<char> valid;
  std::vector<std::string> failed_ids;
};

JackknifeReplicates jackknife_replicates(const ArmModel& arm,
                                         const std::vector<double>& times);

// Rows (time, alpha, mean, var, mean_jackknife_var); errors above 5% replicate
// failures.
ResultTable jackknife(const ArmModel& arm, const std::vector<double>& times);

// Rows (time, alpha_control, alpha_treatment, mean_treatment, mean_control,
// mean_effect, var_effect) over the full alpha-pair grid.
ResultTable treatment_effect(const SensitivityModel& model,
                             const std::vector<double>& times);

// Alphas whose mean curve stays inside [mu_min, mu_max] on a grid of at most
// `spacing` over every modeled interval (closed bounds).
std::vector<double> restrict_alpha_range(const ArmModel& arm, double mu_min,
                                         double mu_max, double spacing = 1.0);

// Deterministic work distribution: results must be stored by index.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace sensiat
