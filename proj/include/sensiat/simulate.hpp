#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sensiat/rng.hpp"
#include "sensiat/sensitivity.hpp"
#include "sensiat/spline.hpp"
#include "sensiat/trial_data.hpp"

namespace sensiat {

struct PiecewiseRate {
  std::vector<double> breaks;  // increasing interior breakpoints
  std::vector<double> rates;   // breaks.size() + 1 values, nonnegative

  double at(double t) const;
  double max_rate() const;
};

// One arm's generative model: empirical baseline draws, stratified
// piecewise-constant assessment intensity with a prev_outcome log-linear
// term, and negative-binomial outcomes on a linear predictor of
// (prev_outcome, time, delta_time).  Counts are rescaled by outcome_scale.
struct ArmSimSpec {
  std::vector<double> baseline_pool;
  std::vector<PiecewiseRate> baseline_intensity;  // stratum k uses entry min(k-1, last)
  double gamma_prev_outcome = 0.0;
  double b0 = 0.0, b_prev = 0.0, b_time = 0.0, b_delta = 0.0;
  double dispersion = 1.0;  // kappa > 0
  double outcome_scale = 1.0;
  double true_alpha = 0.0;  // labels the truth used for coverage, not the draws
};

struct SimConfig {
  ArmSimSpec treatment;
  ArmSimSpec control;
  int n_per_arm = 1;
  double end_time = 1.0;
  int max_visits = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Thinning from a piecewise-constant dominating rate.  lambda_bar(t) must
// dominate lambda(t) and be constant between consecutive bar_breaks entries
// (and between state changes signalled through on_event).  on_event returning
// false stops the process early.
std::vector<double> ogata_thinning(const std::function<double(double)>& lambda,
                                   const std::function<double(double)>& lambda_bar,
                                   const std::vector<double>& bar_breaks, double t0,
                                   double horizon, RngStream& rng,
                                   const std::function<bool(double)>& on_event = {});

// Mean of the exponentially tilted negative binomial scaled count:
// C ~ NB(mean e^eta, dispersion kappa), Y = scale * C, tilt weight e^{alpha Y}.
double tilted_nb_mean(double eta, double kappa, double scale, double alpha);

TrialFrame simulate_arm(const SimConfig& config, const ArmSimSpec& spec,
                        const std::string& arm_label, std::uint32_t arm_id,
                        std::uint64_t seed);

// Both arms merged; labels "treatment" (arm id 1) and "control" (arm id 0).
TrialFrame simulate_trial(const SimConfig& config, std::uint64_t seed);

struct TrueBeta {
  std::vector<Eigen::VectorXd> beta;      // per basis
  std::vector<Eigen::MatrixXd> beta_cov;  // Monte-Carlo error of beta
  int mc_reps = 0;

  double mean_at(const std::vector<SplineBasisSpec>& bases, double t) const;
  double se_at(const std::vector<SplineBasisSpec>& bases, double t) const;
};

// Monte-Carlo projection of the alpha-tilted population mean onto the bases.
TrueBeta compute_true_beta(const SimConfig& config, const ArmSimSpec& spec,
                           std::uint32_t arm_id, double alpha, int mc_reps,
                           const std::vector<SplineBasisSpec>& bases,
                           std::uint64_t seed);

struct StudyOptions {
  std::vector<double> times;
  std::vector<double> analysis_alphas;
  EngineOptions engine;  // alphas overridden with analysis_alphas
  int reps = 50;
  int truth_mc_reps = 100000;
  bool with_jackknife = true;
  // false: truth matches each analysis alpha.  true: truth is fixed at each
  // arm's spec.true_alpha, so off-truth analysis rows show the induced bias.
  bool truth_at_true_alpha = false;
};

// Columns: estimand (0 control mean, 1 treatment mean, 2 effect), time,
// alpha_control, alpha_treatment, true_value, mean_estimate, bias,
// cover_if, cover_jackknife, reps_used.
ResultTable run_simulation_study(const SimConfig& config, const StudyOptions& opts);

}  // namespace sensiat
