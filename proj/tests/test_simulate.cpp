#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sensiat/simulate.hpp"

using namespace sensiat;

namespace {

// asymptotic Kolmogorov-Smirnov p-value against the uniform on [0,1]
double ks_uniform_pvalue(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const int n = static_cast<int>(u.size());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    d = std::max(d, std::abs((i + 1.0) / n - u[i]));
    d = std::max(d, std::abs(u[i] - double(i) / n));
  }
  double lambda = (std::sqrt(double(n)) + 0.12 + 0.11 / std::sqrt(double(n))) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  }
  return std::clamp(p, 0.0, 1.0);
}

SimConfig tiny_config() {
  SimConfig config;
  ArmSimSpec spec;
  spec.baseline_pool = {0.5, 1.0, 1.5};
  PiecewiseRate rate;
  rate.rates = {2.0};
  spec.baseline_intensity = {rate};
  spec.gamma_prev_outcome = 0.1;
  spec.b0 = 0.3;
  spec.b_prev = 0.2;
  spec.b_time = 0.05;
  spec.dispersion = 3.0;
  spec.outcome_scale = 0.5;
  config.treatment = spec;
  config.control = spec;
  config.n_per_arm = 25;
  config.end_time = 3.0;
  config.max_visits = 6;
  config.seed = 7;
  return config;
}

std::string emit(const TrialFrame& frame) {
  std::ostringstream out;
  emit_long_table(frame, out, TableSchema{});
  return out.str();
}

}  // namespace

TEST_CASE("counter rng streams are deterministic and key-disjoint") {
  RngStream a(123, 1, 5, 0);
  RngStream b(123, 1, 5, 0);
  RngStream c(123, 1, 6, 0);
  RngStream d(123, 2, 5, 0);
  RngStream e(123, 1, 5, 1);
  bool differs_c = false, differs_d = false, differs_e = false;
  for (int i = 0; i < 64; ++i) {
    auto va = a.next_bits();
    CHECK(va == b.next_bits());
    differs_c |= va != c.next_bits();
    differs_d |= va != d.next_bits();
    differs_e |= va != e.next_bits();
  }
  CHECK(differs_c);
  CHECK(differs_d);
  CHECK(differs_e);
}

TEST_CASE("uniform draws live in (0, 1] with the right mean") {
  RngStream rng(99, 0, 0, 0);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
    sum += u;
  }
  // mean 1/2, sd 1/sqrt(12n)
  CHECK(std::abs(sum / n - 0.5) < 4.0 / std::sqrt(12.0 * n));
}

TEST_CASE("gamma, poisson and negative binomial match their moments") {
  RngStream rng(321, 0, 0, 0);
  const int n = 20000;

  double gsum = 0.0, gsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = rng.gamma(3.0);
    gsum += g;
    gsq += g * g;
  }
  double gmean = gsum / n, gvar = gsq / n - gmean * gmean;
  CHECK(std::abs(gmean - 3.0) < 4.0 * std::sqrt(3.0 / n));
  CHECK(std::abs(gvar - 3.0) < 0.35);

  double psum = 0.0;
  for (int i = 0; i < n; ++i) psum += rng.poisson(4.0);
  CHECK(std::abs(psum / n - 4.0) < 4.0 * std::sqrt(4.0 / n));

  // NB(mean mu, dispersion kappa): var = mu + mu^2/kappa
  const double mu = 2.5, kappa = 3.0;
  double nsum = 0.0, nsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = rng.negative_binomial(mu, kappa);
    nsum += v;
    nsq += v * v;
  }
  double nmean = nsum / n, nvar = nsq / n - nmean * nmean;
  double true_var = mu + mu * mu / kappa;
  CHECK(std::abs(nmean - mu) < 4.0 * std::sqrt(true_var / n));
  CHECK(std::abs(nvar - true_var) < 0.5);
}

TEST_CASE("thinning a constant rate reproduces the Poisson count") {
  const double c = 1.7, T = 4.0;
  auto lam = [&](double) { return c; };
  double total = 0.0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    RngStream rng(5, 0, static_cast<std::uint32_t>(r), 1);
    total += static_cast<double>(ogata_thinning(lam, lam, {}, 0.0, T, rng).size());
  }
  double mean = total / reps;
  CHECK(std::abs(mean - c * T) < 3.0 * std::sqrt(c * T / reps));
}

TEST_CASE("thinning edge cases: zero rate, tight bound, violated bound") {
  auto zero = [](double) { return 0.0; };
  auto one = [](double) { return 1.0; };
  RngStream rng(6, 0, 0, 1);
  CHECK(ogata_thinning(zero, one, {}, 0.0, 10.0, rng).empty());

  // lambda == lambda_bar: every proposal is accepted, so event times replay
  // the stream's exponential skeleton exactly
  RngStream live(6, 0, 1, 1);
  auto events = ogata_thinning(one, one, {}, 0.0, 10.0, live);
  RngStream replay(6, 0, 1, 1);
  double t = 0.0;
  for (double observed : events) {
    t += replay.exponential(1.0);
    replay.uniform();  // the acceptance draw
    CHECK(observed == t);
  }

  auto big = [](double) { return 2.0; };
  RngStream bad(6, 0, 2, 1);
  CHECK_THROWS_AS(ogata_thinning(big, one, {}, 0.0, 10.0, bad), FitError);
}

TEST_CASE("thinned inhomogeneous process passes a time-rescaling KS test") {
  // lambda(t) = a + b sin^2(t), Lambda(t) = a t + b (t/2 - sin(2t)/4)
  const double a = 1.0, b = 2.0, T = 1000.0;
  auto lam = [&](double t) { return a + b * std::pow(std::sin(t), 2.0); };
  auto bar = [&](double) { return a + b; };
  RngStream rng(77, 0, 0, 1);
  auto events = ogata_thinning(lam, bar, {}, 0.0, T, rng);
  REQUIRE(events.size() > 1000);
  auto Lambda = [&](double t) {
    return a * t + b * (t / 2.0 - std::sin(2.0 * t) / 4.0);
  };
  std::vector<double> u;
  double prev = 0.0;
  for (double t : events) {
    double gap = Lambda(t) - Lambda(prev);
    u.push_back(1.0 - std::exp(-gap));  // Exp(1) gaps -> uniform
    prev = t;
  }
  CHECK(ks_uniform_pvalue(u) > 0.01);
}

TEST_CASE("tilted negative binomial mean identities") {
  const double eta = 0.4, kappa = 3.0, scale = 0.5;
  CHECK(tilted_nb_mean(eta, kappa, scale, 0.0) ==
        doctest::Approx(scale * std::exp(eta)).epsilon(1e-12));
  // monotone nondecreasing in alpha
  double prev = -1e300;
  for (double alpha = -2.0; alpha <= 0.4; alpha += 0.1) {
    double m = tilted_nb_mean(eta, kappa, scale, alpha);
    CHECK(m >= prev);
    prev = m;
  }
  // tilt weight must keep the geometric factor below one
  CHECK_THROWS_AS(tilted_nb_mean(5.0, 1.0, 10.0, 2.0), FitError);
}

TEST_CASE("simulated trials are deterministic and structurally valid") {
  SimConfig config = tiny_config();
  TrialFrame one = simulate_trial(config, config.seed);
  TrialFrame two = simulate_trial(config, config.seed);
  CHECK(emit(one) == emit(two));

  TrialFrame other = simulate_trial(config, config.seed + 1);
  CHECK(emit(one) != emit(other));

  one.validate();
  CHECK(one.subjects.size() == 2u * config.n_per_arm);
  int with_terminal = 0;
  for (const auto& s : one.subjects) {
    REQUIRE(!s.rows.empty());
    CHECK(s.rows[0].time == 0.0);
    CHECK(s.post_baseline_events() <= config.max_visits);
    for (std::size_t r = 1; r < s.rows.size(); ++r) {
      CHECK(s.rows[r].time > s.rows[r - 1].time);
      CHECK(s.rows[r].time <= config.end_time);
    }
    if (s.has_terminal_row()) ++with_terminal;
  }
  CHECK(with_terminal > 0);

  // visit-count monotonicity: k-th visits can't outnumber (k-1)-th visits
  std::vector<int> counts(config.max_visits + 1, 0);
  for (const auto& s : one.subjects) {
    int k = s.post_baseline_events();
    for (int j = 1; j <= k; ++j) ++counts[j];
  }
  for (int j = 2; j <= config.max_visits; ++j) CHECK(counts[j] <= counts[j - 1]);
}

TEST_CASE("true beta for a state-free log-link is the constant curve") {
  SimConfig config = tiny_config();
  ArmSimSpec flat = config.control;
  flat.gamma_prev_outcome = 0.0;
  flat.b_prev = 0.0;
  flat.b_time = 0.0;
  flat.b_delta = 0.0;
  config.control = flat;
  std::vector<SplineBasisSpec> bases = {make_basis({0.2, 1.5, 2.8}, 3)};
  TrueBeta truth = compute_true_beta(config, flat, 0, 0.0, 400, bases, 99);
  double expect = flat.outcome_scale * std::exp(flat.b0);
  for (double t : {0.2, 0.9, 1.5, 2.2, 2.8}) {
    CHECK(truth.mean_at(bases, t) == doctest::Approx(expect).epsilon(1e-8));
  }
  CHECK(truth.mc_reps == 400);
  CHECK(truth.se_at(bases, 1.5) >= 0.0);
}

TEST_CASE("fixed-truth mode pins the true value at each arm's generative alpha") {
  SimConfig config = tiny_config();
  config.n_per_arm = 25;
  config.control.true_alpha = 0.4;
  StudyOptions opts;
  opts.times = {1.5};
  opts.analysis_alphas = {0.0, 0.3};
  opts.engine.knot_sets = {{0.3, 1.5, 2.7}};
  opts.engine.quad.method = QuadMethod::Fixed;
  opts.engine.quad.resolution = 24;
  opts.engine.outcome.max_evals = 40;
  opts.engine.intensity.bandwidth = 0.5;
  opts.reps = 1;
  opts.truth_mc_reps = 300;
  opts.with_jackknife = false;
  opts.truth_at_true_alpha = true;
  ResultTable table = run_simulation_study(config, opts);
  // control rows (estimand 0) share one true value across analysis alphas
  double control_truth = kMissing;
  double treatment_truth = kMissing;
  for (const auto& row : table.rows) {
    if (row[0] == 0.0) {
      if (is_missing(control_truth)) control_truth = row[4];
      CHECK(row[4] == control_truth);
    } else if (row[0] == 1.0) {
      if (is_missing(treatment_truth)) treatment_truth = row[4];
      CHECK(row[4] == treatment_truth);
    }
  }
  // the control truth is tilted (alpha 0.4) while the treatment truth is not
  CHECK(control_truth > treatment_truth);
}

TEST_CASE("a one-replicate study produces coverage indicators in {0,1}") {
  SimConfig config = tiny_config();
  config.n_per_arm = 25;
  StudyOptions opts;
  opts.times = {1.0, 2.0};
  opts.analysis_alphas = {0.0};
  opts.engine.knot_sets = {{0.3, 1.5, 2.7}};
  opts.engine.quad.method = QuadMethod::Fixed;
  opts.engine.quad.resolution = 32;
  opts.engine.outcome.max_evals = 40;
  opts.engine.intensity.bandwidth = 0.5;
  opts.engine.jackknife_max_evals = 20;
  opts.reps = 1;
  opts.truth_mc_reps = 500;
  opts.with_jackknife = false;
  ResultTable table = run_simulation_study(config, opts);
  CHECK(table.columns.size() == 10);
  // estimands: control mean, treatment mean, effect at each (time, alpha)
  CHECK(table.rows.size() == 3 * opts.times.size());
  for (const auto& row : table.rows) {
    double cover_if = row[7];
    CHECK((cover_if == 0.0 || cover_if == 1.0));
    CHECK(row[9] == 1.0);                       // reps_used
    CHECK(row[6] == doctest::Approx(row[5] - row[4]).epsilon(1e-12));  // bias
    CHECK(std::isfinite(row[5]));
  }
}
