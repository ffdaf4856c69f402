#include "sensiat/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sensiat {

double PiecewiseRate::at(double t) const {
  std::size_t idx = 0;
  while (idx < breaks.size() && t >= breaks[idx]) ++idx;
  return rates[idx];
}

double PiecewiseRate::max_rate() const {
  return *std::max_element(rates.begin(), rates.end());
}

void SimConfig::validate() const {
  if (n_per_arm < 1) throw ValidationError("sim config: n_per_arm must be >= 1");
  if (!(end_time > 0.0)) throw ValidationError("sim config: end_time must be > 0");
  if (max_visits < 1) throw ValidationError("sim config: max_visits must be >= 1");
  for (const ArmSimSpec* spec : {&treatment, &control}) {
    if (spec->baseline_pool.empty()) {
      throw ValidationError("sim config: empty baseline outcome pool");
    }
    if (spec->baseline_intensity.empty()) {
      throw ValidationError("sim config: no baseline intensity");
    }
    for (const auto& pw : spec->baseline_intensity) {
      if (pw.rates.size() != pw.breaks.size() + 1) {
        throw ValidationError("sim config: piecewise rate needs breaks+1 values");
      }
      for (double r : pw.rates) {
        if (r < 0.0) throw ValidationError("sim config: negative intensity");
      }
      if (!std::is_sorted(pw.breaks.begin(), pw.breaks.end())) {
        throw ValidationError("sim config: unsorted intensity breaks");
      }
    }
    if (!(spec->dispersion > 0.0)) {
      throw ValidationError("sim config: dispersion must be > 0");
    }
    if (!(spec->outcome_scale > 0.0)) {
      throw ValidationError("sim config: outcome_scale must be > 0");
    }
  }
}

std::vector<double> ogata_thinning(const std::function<double(double)>& lambda,
                                   const std::function<double(double)>& lambda_bar,
                                   const std::vector<double>& bar_breaks, double t0,
                                   double horizon, RngStream& rng,
                                   const std::function<bool(double)>& on_event) {
  std::vector<double> events;
  double t = t0;
  while (t < horizon) {
    double next_break = horizon;
    for (double b : bar_breaks) {
      if (b > t) {
        next_break = std::min(next_break, b);
        break;  // breaks sorted
      }
    }
    double bar = lambda_bar(t);
    if (bar <= 0.0) {
      t = next_break;
      continue;
    }
    double cand = t + rng.exponential(bar);
    if (cand >= next_break) {
      t = next_break;  // memoryless restart at the rate change
      continue;
    }
    double lam = lambda(cand);
    if (lam > bar * (1.0 + 1e-9)) {
      throw FitError("ogata_thinning: intensity " + format_double(lam) +
                     " exceeds its bound " + format_double(bar) + " at t=" +
                     format_double(cand));
    }
    double u = rng.uniform();
    t = cand;
    if (u * bar <= lam) {
      events.push_back(cand);
      if (on_event && !on_event(cand)) break;
    }
  }
  return events;
}

double tilted_nb_mean(double eta, double kappa, double scale, double alpha) {
  double mu = std::exp(eta);
  double q = mu / (mu + kappa);
  double qp = q * std::exp(alpha * scale);
  if (qp >= 1.0) {
    throw FitError("tilted_nb_mean: tilt alpha=" + format_double(alpha) +
                   " has no finite mean for this outcome model");
  }
  return scale * kappa * qp / (1.0 - qp);
}

namespace {

struct SimAssessment {
  double time;
  double outcome;
};

// Baseline plus thinned assessments with negative-binomial outcomes.
std::vector<SimAssessment> simulate_subject(const SimConfig& config,
                                            const ArmSimSpec& spec,
                                            std::uint32_t arm_id, std::uint64_t seed,
                                            std::uint32_t subject) {
  RngStream base_rng(seed, arm_id, subject, 0);
  RngStream thin_rng(seed, arm_id, subject, 1);
  RngStream out_rng(seed, arm_id, subject, 2);

  std::vector<SimAssessment> rows;
  std::size_t pool_idx = static_cast<std::size_t>(
      base_rng.uniform() * spec.baseline_pool.size());
  pool_idx = std::min(pool_idx, spec.baseline_pool.size() - 1);
  rows.push_back({0.0, spec.baseline_pool[pool_idx]});

  double prev_out = rows[0].outcome;
  double prev_time = 0.0;
  int events = 0;

  std::vector<double> breaks;
  for (const auto& pw : spec.baseline_intensity) {
    breaks.insert(breaks.end(), pw.breaks.begin(), pw.breaks.end());
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  auto stratum_rate = [&]() -> const PiecewiseRate& {
    std::size_t k = std::min(static_cast<std::size_t>(events),
                             spec.baseline_intensity.size() - 1);
    return spec.baseline_intensity[k];
  };
  auto lambda = [&](double t) {
    return stratum_rate().at(t) * std::exp(spec.gamma_prev_outcome * prev_out);
  };
  auto on_event = [&](double t) {
    double eta = spec.b0 + spec.b_prev * prev_out + spec.b_time * t +
                 spec.b_delta * (t - prev_time);
    long c = out_rng.negative_binomial(std::exp(eta), spec.dispersion);
    double y = spec.outcome_scale * static_cast<double>(c);
    rows.push_back({t, y});
    prev_out = y;
    prev_time = t;
    ++events;
    return events < config.max_visits;
  };
  ogata_thinning(lambda, lambda, breaks, 0.0, config.end_time, thin_rng, on_event);
  return rows;
}

int basis_for(const std::vector<SplineBasisSpec>& bases, double t) {
  for (std::size_t m = 0; m < bases.size(); ++m) {
    if (t >= bases[m].t1() && t <= bases[m].t2()) return static_cast<int>(m);
  }
  return -1;
}

}  // namespace

TrialFrame simulate_arm(const SimConfig& config, const ArmSimSpec& spec,
                        const std::string& arm_label, std::uint32_t arm_id,
                        std::uint64_t seed) {
  config.validate();
  TrialFrame frame;
  for (int i = 0; i < config.n_per_arm; ++i) {
    auto rows = simulate_subject(config, spec, arm_id, seed, i);
    Subject subj;
    subj.id = arm_label + "-" + std::to_string(i + 1);
    subj.arm = arm_label;
    for (const auto& r : rows) {
      AssessmentRecord rec;
      rec.time = r.time;
      rec.outcome = r.outcome;
      subj.rows.push_back(rec);
    }
    frame.subjects.push_back(std::move(subj));
  }
  return add_terminal_observations(frame, config.end_time, config.max_visits);
}

TrialFrame simulate_trial(const SimConfig& config, std::uint64_t seed) {
  TrialFrame trt = simulate_arm(config, config.treatment, "treatment", 1, seed);
  TrialFrame ctl = simulate_arm(config, config.control, "control", 0, seed);
  TrialFrame merged = trt;
  for (auto& s : ctl.subjects) merged.subjects.push_back(std::move(s));
  return merged;
}

double TrueBeta::mean_at(const std::vector<SplineBasisSpec>& bases, double t) const {
  int m = basis_for(bases, t);
  if (m < 0) throw ValidationError("true mean: time outside every interval");
  return evaluate_basis(bases[m], t).dot(beta[m]);
}

double TrueBeta::se_at(const std::vector<SplineBasisSpec>& bases, double t) const {
  int m = basis_for(bases, t);
  if (m < 0) throw ValidationError("true mean: time outside every interval");
  Eigen::VectorXd B = evaluate_basis(bases[m], t);
  return std::sqrt(std::max(0.0, B.dot(beta_cov[m] * B)));
}

TrueBeta compute_true_beta(const SimConfig& config, const ArmSimSpec& spec,
                           std::uint32_t arm_id, double alpha, int mc_reps,
                           const std::vector<SplineBasisSpec>& bases,
                           std::uint64_t seed) {
  if (mc_reps < 1) throw ValidationError("compute_true_beta: mc_reps must be >= 1");
  const int M = static_cast<int>(bases.size());

  std::vector<double> gl_nodes, gl_weights;
  gauss_legendre(7, &gl_nodes, &gl_weights);

  std::vector<Eigen::VectorXd> sum_v(M), sum_v2diag(M);
  std::vector<Eigen::MatrixXd> sum_vv(M);
  for (int m = 0; m < M; ++m) {
    sum_v[m] = Eigen::VectorXd::Zero(bases[m].dimension());
    sum_vv[m] = Eigen::MatrixXd::Zero(bases[m].dimension(), bases[m].dimension());
  }

  for (int rep = 0; rep < mc_reps; ++rep) {
    auto rows = simulate_subject(config, spec, arm_id, seed, rep);
    for (int m = 0; m < M; ++m) {
      const auto& basis = bases[m];
      // integrate B(t) * tilted mean(t | observed past) piecewise
      std::vector<double> cuts = {basis.t1(), basis.t2()};
      for (const auto& r : rows) {
        if (r.time > basis.t1() && r.time < basis.t2()) cuts.push_back(r.time);
      }
      for (std::size_t k = 1; k + 1 < basis.knots.size(); ++k) {
        if (basis.knots[k] > basis.t1() && basis.knots[k] < basis.t2()) {
          cuts.push_back(basis.knots[k]);
        }
      }
      std::sort(cuts.begin(), cuts.end());
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

      Eigen::VectorXd v = Eigen::VectorXd::Zero(basis.dimension());
      for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        double a = cuts[c], b = cuts[c + 1];
        // state on this piece: most recent assessment before the midpoint
        double mid = 0.5 * (a + b);
        double prev_out = rows[0].outcome, prev_time = 0.0;
        for (const auto& r : rows) {
          if (r.time < mid) {
            prev_out = r.outcome;
            prev_time = r.time;
          }
        }
        for (std::size_t g = 0; g < gl_nodes.size(); ++g) {
          double t = 0.5 * (a + b) + 0.5 * (b - a) * gl_nodes[g];
          double eta = spec.b0 + spec.b_prev * prev_out + spec.b_time * t +
                       spec.b_delta * (t - prev_time);
          double mval = tilted_nb_mean(eta, spec.dispersion, spec.outcome_scale, alpha);
          v += (0.5 * (b - a) * gl_weights[g] * mval) * evaluate_basis(basis, t);
        }
      }
      sum_v[m] += v;
      sum_vv[m] += v * v.transpose();
    }
  }

  TrueBeta truth;
  truth.mc_reps = mc_reps;
  for (int m = 0; m < M; ++m) {
    Eigen::MatrixXd V = gram_matrix(bases[m]);
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    Eigen::VectorXd vbar = sum_v[m] / mc_reps;
    truth.beta.push_back(llt.solve(vbar));
    Eigen::MatrixXd cov_v =
        (sum_vv[m] / mc_reps - vbar * vbar.transpose()) / std::max(1, mc_reps - 1);
    Eigen::MatrixXd half = llt.solve(cov_v);
    truth.beta_cov.push_back(llt.solve(half.transpose()).transpose());
  }
  return truth;
}

ResultTable run_simulation_study(const SimConfig& config, const StudyOptions& opts) {
  config.validate();
  if (opts.times.empty()) throw ValidationError("simulation study: empty time list");
  if (opts.analysis_alphas.empty()) {
    throw ValidationError("simulation study: empty alpha list");
  }
  if (opts.reps < 1) throw ValidationError("simulation study: reps must be >= 1");

  EngineOptions engine = opts.engine;
  engine.alphas = opts.analysis_alphas;
  std::vector<SplineBasisSpec> bases;
  for (const auto& knots : engine.knot_sets) bases.push_back(make_basis(knots, engine.degree));

  const int nt = static_cast<int>(opts.times.size());
  const int na = static_cast<int>(opts.analysis_alphas.size());

  // truth per (arm, alpha): tilted population mean projected onto the bases
  std::vector<std::vector<TrueBeta>> truth(2);
  for (int arm = 0; arm < 2; ++arm) {
    const ArmSimSpec& spec = arm == 1 ? config.treatment : config.control;
    if (opts.truth_at_true_alpha) {
      TrueBeta fixed =
          compute_true_beta(config, spec, arm, spec.true_alpha, opts.truth_mc_reps,
                            bases, config.seed ^ 0x517cc1b727220a95ull);
      truth[arm].assign(na, fixed);
    } else {
      for (int a = 0; a < na; ++a) {
        truth[arm].push_back(
            compute_true_beta(config, spec, arm, opts.analysis_alphas[a],
                              opts.truth_mc_reps, bases,
                              config.seed ^ 0x517cc1b727220a95ull));
      }
    }
  }

  // accumulators: per (arm, time, alpha) and per (time, alpha_ctl, alpha_trt)
  auto arm_idx = [&](int arm, int t, int a) { return (arm * nt + t) * na + a; };
  std::vector<double> arm_est_sum(2 * nt * na, 0.0);
  std::vector<int> arm_hit_if(2 * nt * na, 0), arm_hit_jk(2 * nt * na, 0);
  auto eff_idx = [&](int t, int ac, int at) { return (t * na + ac) * na + at; };
  std::vector<double> eff_est_sum(nt * na * na, 0.0);
  std::vector<int> eff_hit_if(nt * na * na, 0), eff_hit_jk(nt * na * na, 0);
  int used = 0;

  for (int rep = 0; rep < opts.reps; ++rep) {
    std::uint64_t rep_seed = RngStream(config.seed, 9999, rep, 7).next_bits();
    try {
      TrialFrame frame = simulate_trial(config, rep_seed);
      SensitivityModel model = fit_model(frame, "treatment", engine);

      // jackknife replicates once per arm, reused for means and effects
      std::vector<Eigen::MatrixXd> jk_var(2, Eigen::MatrixXd::Zero(nt, na));
      if (opts.with_jackknife) {
        for (int arm = 0; arm < 2; ++arm) {
          const ArmModel& am = arm == 1 ? model.treatment : model.control;
          ResultTable jt = jackknife(am, opts.times);
          for (int t = 0; t < nt; ++t) {
            for (int a = 0; a < na; ++a) {
              jk_var[arm](t, a) = jt.rows[t * na + a][4];
            }
          }
        }
      }

      for (int arm = 0; arm < 2; ++arm) {
        const ArmModel& am = arm == 1 ? model.treatment : model.control;
        for (int t = 0; t < nt; ++t) {
          for (int a = 0; a < na; ++a) {
            double est = am.mean_at(opts.times[t], a);
            double tv = truth[arm][a].mean_at(bases, opts.times[t]);
            double if_sd = std::sqrt(am.if_var_at(opts.times[t], a));
            arm_est_sum[arm_idx(arm, t, a)] += est;
            if (std::abs(est - tv) <= kZ95 * if_sd) ++arm_hit_if[arm_idx(arm, t, a)];
            if (opts.with_jackknife &&
                std::abs(est - tv) <= kZ95 * std::sqrt(jk_var[arm](t, a))) {
              ++arm_hit_jk[arm_idx(arm, t, a)];
            }
          }
        }
      }
      for (int t = 0; t < nt; ++t) {
        for (int ac = 0; ac < na; ++ac) {
          for (int at = 0; at < na; ++at) {
            double est = model.treatment.mean_at(opts.times[t], at) -
                         model.control.mean_at(opts.times[t], ac);
            double tv = truth[1][at].mean_at(bases, opts.times[t]) -
                        truth[0][ac].mean_at(bases, opts.times[t]);
            double var_if = model.treatment.if_var_at(opts.times[t], at) +
                            model.control.if_var_at(opts.times[t], ac);
            eff_est_sum[eff_idx(t, ac, at)] += est;
            if (std::abs(est - tv) <= kZ95 * std::sqrt(var_if)) {
              ++eff_hit_if[eff_idx(t, ac, at)];
            }
            if (opts.with_jackknife &&
                std::abs(est - tv) <=
                    kZ95 * std::sqrt(jk_var[1](t, at) + jk_var[0](t, ac))) {
              ++eff_hit_jk[eff_idx(t, ac, at)];
            }
          }
        }
      }
      ++used;
    } catch (const std::exception&) {
      // failed replicate: recorded through reps_used
    }
  }
  if (used == 0) throw FitError("simulation study: every replicate failed");

  const double nan = kMissing;
  ResultTable table;
  table.columns = {"estimand",      "time",     "alpha_control", "alpha_treatment",
                   "true_value",    "mean_estimate", "bias",     "cover_if",
                   "cover_jackknife", "reps_used"};
  for (int arm = 0; arm < 2; ++arm) {
    for (int t = 0; t < nt; ++t) {
      for (int a = 0; a < na; ++a) {
        double tv = truth[arm][a].mean_at(bases, opts.times[t]);
        double est = arm_est_sum[arm_idx(arm, t, a)] / used;
        table.rows.push_back(
            {double(arm), opts.times[t],
             arm == 0 ? opts.analysis_alphas[a] : nan,
             arm == 1 ? opts.analysis_alphas[a] : nan, tv, est, est - tv,
             double(arm_hit_if[arm_idx(arm, t, a)]) / used,
             opts.with_jackknife ? double(arm_hit_jk[arm_idx(arm, t, a)]) / used : nan,
             double(used)});
      }
    }
  }
  for (int t = 0; t < nt; ++t) {
    for (int ac = 0; ac < na; ++ac) {
      for (int at = 0; at < na; ++at) {
        double tv = truth[1][at].mean_at(bases, opts.times[t]) -
                    truth[0][ac].mean_at(bases, opts.times[t]);
        double est = eff_est_sum[eff_idx(t, ac, at)] / used;
        table.rows.push_back(
            {2.0, opts.times[t], opts.analysis_alphas[ac], opts.analysis_alphas[at],
             tv, est, est - tv, double(eff_hit_if[eff_idx(t, ac, at)]) / used,
             opts.with_jackknife ? double(eff_hit_jk[eff_idx(t, ac, at)]) / used : nan,
             double(used)});
      }
    }
  }
  return table;
}

}  // namespace sensiat
