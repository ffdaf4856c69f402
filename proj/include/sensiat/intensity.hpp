#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sensiat/common.hpp"
#include "sensiat/kernels.hpp"
#include "sensiat/trial_data.hpp"

namespace sensiat {

// `event(prev_time, time, observed) ~ terms... | strata(visit_number)`
struct IntensityFormula {
  std::vector<std::string> terms;  // prev_outcome and/or covariate names

  static IntensityFormula parse(const std::string& text);
  static IntensityFormula defaults();  // ~ prev_outcome | strata(visit_number)
  std::string to_string() const;
};

struct IntensityDesignRow {
  double entry = 0.0;  // prev_time
  double exit = 0.0;   // time
  bool event = false;
  int stratum = 0;  // visit number k
  int subject_index = 0;
  Eigen::VectorXd z;
};

struct IntensityDesign {
  std::vector<IntensityDesignRow> rows;
  std::vector<std::string> colnames;
  // categorical covariate -> ordered level list (first level is reference)
  std::map<std::string, std::vector<std::string>> cat_levels;
  int n_strata = 0;
};

IntensityDesign build_intensity_design(const TrialFrame& frame,
                                       const std::vector<CountingProcessRecord>& cp,
                                       const IntensityFormula& formula);

// Stratified partial log-likelihood with Breslow tie handling.
// Returns value; fills gradient and hessian (of the log-likelihood) if non-null.
double partial_loglik(const Eigen::VectorXd& gamma, const IntensityDesign& design,
                      Eigen::VectorXd* gradient = nullptr,
                      Eigen::MatrixXd* hessian = nullptr);

struct BaselineSteps {
  std::vector<double> times;  // event times with jumps, increasing
  std::vector<double> jumps;  // dLambda at each time
};

struct IntensityFit {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd gamma_cov;  // inverse observed information
  std::vector<BaselineSteps> baseline;  // index 0 = stratum 1
  Kernel kernel = Kernel::Epanechnikov;
  double bandwidth = 0.0;
  IntensityFormula formula;
  std::vector<std::string> colnames;
  std::map<std::string, std::vector<std::string>> cat_levels;
  int iterations = 0;
  double loglik = 0.0;
  std::vector<std::string> warnings;

  int n_strata() const { return static_cast<int>(baseline.size()); }
  // Smoothed baseline intensity for stratum k (1-based).
  double baseline_intensity(int k, double t) const;
  // lambda_hat(t | Z, stratum k)
  double evaluate(double t, const Eigen::VectorXd& z, int k) const;
};

struct IntensityOptions {
  Kernel kernel = Kernel::Epanechnikov;
  std::optional<double> bandwidth;  // user override; otherwise plug-in selection
  double grad_tol = 1e-8;
  double loglik_rel_tol = 1e-10;
  int max_iter = 50;
  std::optional<Eigen::VectorXd> gamma_start;  // warm start (jackknife refits)
};

IntensityFit fit_andersen_gill(const IntensityDesign& design, const IntensityOptions& opts);

std::vector<BaselineSteps> breslow_cumulative_baseline(const Eigen::VectorXd& gamma,
                                                       const IntensityDesign& design);

// Ruppert-Sheather-Wand direct plug-in local-linear bandwidth on
// (event time, jump size) pairs, with a Silverman fallback.
double select_bandwidth(const std::vector<BaselineSteps>& baseline);

}  // namespace sensiat
