#include "sensiat/sensitivity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <ostream>
#include <thread>

namespace sensiat {

TiltedMoments tilted_moments(const ConditionalDistribution& dist, double alpha) {
  const std::size_t n = dist.support.size();
  if (n == 0) throw ValidationError("tilted_moments: empty distribution");
  TiltedMoments tm;
  if (alpha == 0.0) {
    tm.e_alpha = 1.0;
    tm.ye_alpha = dist.mean();
    tm.tilted_mean = tm.ye_alpha;
    return tm;
  }
  const double shift = dist.support.back();  // support ascending: max value
  double sums[3];
  simd::active_ops().tilt_sums(dist.weights.data(), dist.support.data(), n, alpha,
                               shift, sums);
  const double s0 = sums[1], s1 = sums[2];
  tm.tilted_mean = s1 / s0;
  const double scale = std::exp(alpha * shift);
  tm.e_alpha = s0 * scale;
  tm.ye_alpha = s1 * scale;
  return tm;
}

double tilted_variance(const ConditionalDistribution& dist, double alpha) {
  const double shift = dist.support.empty() ? 0.0 : dist.support.back();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t j = 0; j < dist.support.size(); ++j) {
    double e = std::exp(alpha * (dist.support[j] - shift));
    double we = dist.weights[j] * e;
    s0 += we;
    s1 += we * dist.support[j];
    s2 += we * dist.support[j] * dist.support[j];
  }
  double m = s1 / s0;
  return s2 / s0 - m * m;
}

double rho(double lambda_val, const ConditionalDistribution& dist, double alpha,
           double y) {
  if (alpha == 0.0) return lambda_val;
  const double shift = dist.support.back();
  double sums[3];
  simd::active_ops().tilt_sums(dist.weights.data(), dist.support.data(),
                               dist.support.size(), alpha, shift, sums);
  return lambda_val * sums[1] * std::exp(alpha * (shift - y));
}

PastState past_state(const Subject& subject, double t) {
  PastState st;
  bool found = false;
  int events_before = 0;
  for (std::size_t r = 0; r < subject.rows.size(); ++r) {
    const auto& row = subject.rows[r];
    if (is_missing(row.outcome)) continue;
    if (row.time < t) {
      st.prev_outcome = row.outcome;
      st.prev_time = row.time;
      st.record_index = static_cast<int>(r);
      if (row.time > 0.0) ++events_before;
      found = true;
    }
  }
  if (!found) {
    throw ValidationError("past_state: no observed assessment before t for subject " +
                          subject.id);
  }
  st.visit = events_before + 1;
  return st;
}

namespace {

constexpr double kRhoFloor = 1e-10;

// phi_1 for one subject across every alpha; returns n_alphas x d.
Eigen::MatrixXd term1_all_alphas(const TrialFrame& frame,
                                 const std::vector<CountingProcessRecord>& cp,
                                 const IntensityDesign& idesign,
                                 const IntensityFit& intensity,
                                 const SingleIndexFit& outcome,
                                 const SplineBasisSpec& basis, int subject_index,
                                 const std::vector<double>& alphas) {
  const int d = basis.dimension();
  const int na = static_cast<int>(alphas.size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(na, d);
  for (std::size_t r = 0; r < cp.size(); ++r) {
    const auto& rec = cp[r];
    if (rec.subject_index != subject_index || !rec.event) continue;
    if (rec.time < basis.t1() || rec.time > basis.t2()) continue;
    const AssessmentRecord& row = frame.subjects[subject_index].rows[rec.row_index];
    Eigen::VectorXd x = outcome.spec.predictors(rec.prev_outcome, rec.time,
                                                rec.delta_time, row.num_cov);
    ConditionalDistribution dist = nw_conditional_cdf(outcome, x);
    double lambda_val =
        intensity.evaluate(rec.time, idesign.rows[r].z, rec.visit_number);
    Eigen::VectorXd B = evaluate_basis(basis, rec.time);
    for (int a = 0; a < na; ++a) {
      TiltedMoments tm = tilted_moments(dist, alphas[a]);
      double rho_hat = rho(lambda_val, dist, alphas[a], rec.outcome);
      if (rho_hat < kRhoFloor) {
        throw FitError("estimated assessment intensity below floor (rho=" +
                       std::to_string(rho_hat) + ") for subject " +
                       frame.subjects[subject_index].id + " at time " +
                       format_double(rec.time));
      }
      acc.row(a) += ((rec.outcome - tm.tilted_mean) / rho_hat) * B.transpose();
    }
  }
  return acc;
}

// phi_2 for one subject across every alpha; returns n_alphas x d.
Eigen::MatrixXd term2_all_alphas(const TrialFrame& frame, const SingleIndexFit& outcome,
                                 const SplineBasisSpec& basis, int subject_index,
                                 const std::vector<double>& alphas,
                                 const QuadratureOptions& quad) {
  const Subject& subj = frame.subjects[subject_index];
  const int d = basis.dimension();
  const int na = static_cast<int>(alphas.size());
  const double t1 = basis.t1(), t2 = basis.t2();

  // split at assessment times and interior knots: integrand smooth per piece
  std::vector<double> cuts = {t1, t2};
  for (const auto& row : subj.rows) {
    if (!is_missing(row.outcome) && row.time > t1 && row.time < t2) {
      cuts.push_back(row.time);
    }
  }
  for (std::size_t k = 1; k + 1 < basis.knots.size(); ++k) {
    if (basis.knots[k] > t1 && basis.knots[k] < t2) cuts.push_back(basis.knots[k]);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(na * d);
  std::string worst_piece;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c], b = cuts[c + 1];
    PastState st = past_state(subj, 0.5 * (a + b));
    const auto& num_cov = subj.rows[st.record_index].num_cov;
    VectorFn f = [&](double t) {
      Eigen::VectorXd x = outcome.spec.predictors(st.prev_outcome, t,
                                                  t - st.prev_time, num_cov);
      ConditionalDistribution dist = nw_conditional_cdf(outcome, x);
      Eigen::VectorXd B = evaluate_basis(basis, t);
      Eigen::VectorXd out(na * d);
      for (int ai = 0; ai < na; ++ai) {
        out.segment(ai * d, d) = tilted_moments(dist, alphas[ai]).tilted_mean * B;
      }
      return out;
    };
    if (quad.method == QuadMethod::Adaptive) {
      double tol_piece = quad.tolerance * (b - a) / (t2 - t1);
      try {
        acc += adaptive_simpson(f, a, b, tol_piece);
      } catch (const FitError& e) {
        throw FitError("augmentation integral failed on piece [" + format_double(a) +
                       ", " + format_double(b) + "] for subject " + subj.id + ": " +
                       e.what());
      }
    } else if (quad.delta) {
      acc += fixed_trapezoid_delta(f, a, b, *quad.delta);
    } else {
      int res = std::max(
          2, static_cast<int>(std::ceil(quad.resolution * (b - a) / (t2 - t1))) + 1);
      acc += fixed_trapezoid(f, a, b, res);
    }
  }
  Eigen::MatrixXd out(na, d);
  for (int ai = 0; ai < na; ++ai) out.row(ai) = acc.segment(ai * d, d).transpose();
  return out;
}

}  // namespace

Eigen::VectorXd influence_term1(const TrialFrame& frame,
                                const std::vector<CountingProcessRecord>& cp,
                                const IntensityDesign& idesign,
                                const IntensityFit& intensity,
                                const SingleIndexFit& outcome,
                                const SplineBasisSpec& basis, int subject_index,
                                double alpha) {
  return term1_all_alphas(frame, cp, idesign, intensity, outcome, basis, subject_index,
                          {alpha})
      .row(0)
      .transpose();
}

Eigen::VectorXd influence_term2(const TrialFrame& frame, const SingleIndexFit& outcome,
                                const SplineBasisSpec& basis, int subject_index,
                                double alpha, const QuadratureOptions& quad) {
  return term2_all_alphas(frame, outcome, basis, subject_index, {alpha}, quad)
      .row(0)
      .transpose();
}

Eigen::VectorXd estimate_beta(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& V) {
  const int n = static_cast<int>(phi.rows());
  if (n < 1) throw ValidationError("estimate_beta: no subjects");
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) {
    throw FitError("estimate_beta: basis Gram matrix is not positive definite");
  }
  Eigen::VectorXd total = Eigen::VectorXd::Zero(phi.cols());
  for (int i = 0; i < n; ++i) total += phi.row(i).transpose();  // fixed order
  return llt.solve(total / n);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::exception_ptr eptr;
  std::mutex mu;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n || failed.load()) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!eptr) eptr = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (eptr) std::rethrow_exception(eptr);
}

ArmModel fit_arm(const TrialFrame& frame, const EngineOptions& opts) {
  if (opts.knot_sets.empty()) throw ValidationError("fit_arm: no spline knots given");
  if (opts.alphas.empty()) throw ValidationError("fit_arm: empty alpha list");

  ArmModel arm;
  arm.frame = frame;
  arm.frame.validate();
  arm.options = opts;
  arm.alphas = opts.alphas;
  arm.cp = derive_counting_process(arm.frame);

  arm.idesign = build_intensity_design(arm.frame, arm.cp, opts.intensity_formula);
  arm.intensity = fit_andersen_gill(arm.idesign, opts.intensity);

  OutcomeDesign odesign = build_outcome_design(arm.frame, arm.cp, opts.outcome_formula);
  switch (opts.mode) {
    case SIMode::FixedCoef: arm.outcome = fit_fixed_coef(odesign, opts.outcome); break;
    case SIMode::FixedBandwidth:
      arm.outcome = fit_fixed_bandwidth(odesign, opts.outcome);
      break;
    case SIMode::Norm1: arm.outcome = fit_norm1(odesign, opts.outcome); break;
  }

  for (const auto& knots : opts.knot_sets) {
    arm.bases.push_back(make_basis(knots, opts.degree));
    arm.gram.push_back(gram_matrix(arm.bases.back()));
  }

  const int n = static_cast<int>(arm.frame.subjects.size());
  const int M = static_cast<int>(arm.bases.size());
  const int na = static_cast<int>(arm.alphas.size());

  arm.term1.assign(M, std::vector<Eigen::MatrixXd>(na));
  arm.term2.assign(M, std::vector<Eigen::MatrixXd>(na));
  for (int m = 0; m < M; ++m) {
    const int d = arm.bases[m].dimension();
    for (int a = 0; a < na; ++a) {
      arm.term1[m][a].resize(n, d);
      arm.term2[m][a].resize(n, d);
    }
  }

  parallel_for(n, opts.threads, [&](int i) {
    for (int m = 0; m < M; ++m) {
      Eigen::MatrixXd t1 = term1_all_alphas(arm.frame, arm.cp, arm.idesign,
                                            arm.intensity, arm.outcome, arm.bases[m],
                                            i, arm.alphas);
      Eigen::MatrixXd t2 = term2_all_alphas(arm.frame, arm.outcome, arm.bases[m], i,
                                            arm.alphas, opts.quad);
      for (int a = 0; a < na; ++a) {
        arm.term1[m][a].row(i) = t1.row(a);
        arm.term2[m][a].row(i) = t2.row(a);
      }
    }
  });

  arm.beta.assign(M, std::vector<Eigen::VectorXd>(na));
  arm.beta_cov.assign(M, std::vector<Eigen::MatrixXd>(na));
  for (int m = 0; m < M; ++m) {
    Eigen::LLT<Eigen::MatrixXd> llt(arm.gram[m]);
    if (llt.info() != Eigen::Success) {
      throw FitError("fit_arm: spline Gram matrix is not positive definite");
    }
    for (int a = 0; a < na; ++a) {
      Eigen::MatrixXd phi = arm.term1[m][a] + arm.term2[m][a];
      arm.beta[m][a] = estimate_beta(phi, arm.gram[m]);
      Eigen::RowVectorXd mean = phi.colwise().sum() / n;
      Eigen::MatrixXd centered = phi.rowwise() - mean;
      Eigen::MatrixXd S = centered.transpose() * centered;
      // sandwich: (1/n^2) V^{-1} S V^{-1}
      Eigen::MatrixXd half = llt.solve(S);
      arm.beta_cov[m][a] = llt.solve(half.transpose()).transpose() / (double(n) * n);
    }
  }
  return arm;
}

SensitivityModel fit_model(const TrialFrame& frame, const std::string& treatment_label,
                           const EngineOptions& opts) {
  auto [trt, ctl] = split_by_arm(frame, treatment_label);
  SensitivityModel model;
  model.treatment_label = treatment_label;
  model.treatment = fit_arm(trt, opts);
  model.control = fit_arm(ctl, opts);
  return model;
}

int ArmModel::interval_for(double t) const {
  for (std::size_t m = 0; m < bases.size(); ++m) {
    if (t >= bases[m].t1() && t <= bases[m].t2()) return static_cast<int>(m);
  }
  return -1;
}

int ArmModel::alpha_index(double alpha) const {
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    if (alphas[a] == alpha) return static_cast<int>(a);
  }
  return -1;
}

double ArmModel::mean_at(double t, int alpha_idx) const {
  int m = interval_for(t);
  if (m < 0) throw ValidationError("time " + format_double(t) + " outside every interval");
  return evaluate_basis(bases[m], t).dot(beta[m][alpha_idx]);
}

double ArmModel::if_var_at(double t, int alpha_idx) const {
  int m = interval_for(t);
  if (m < 0) throw ValidationError("time " + format_double(t) + " outside every interval");
  Eigen::VectorXd B = evaluate_basis(bases[m], t);
  return B.dot(beta_cov[m][alpha_idx] * B);
}

void ResultTable::emit(std::ostream& out, char delimiter) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out << delimiter;
    out << columns[c];
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << delimiter;
      out << format_double(row[c]);
    }
    out << '\n';
  }
}

ResultTable predict_mean(const ArmModel& arm, const std::vector<double>& times) {
  if (times.empty()) throw ValidationError("predict_mean: empty time list");
  ResultTable table;
  table.columns = {"time", "alpha", "mean", "var"};
  for (double t : times) {
    for (std::size_t a = 0; a < arm.alphas.size(); ++a) {
      table.rows.push_back({t, arm.alphas[a], arm.mean_at(t, static_cast<int>(a)),
                            arm.if_var_at(t, static_cast<int>(a))});
    }
  }
  return table;
}

double jackknife_variance(const std::vector<double>& loo_stats) {
  const std::size_t n = loo_stats.size();
  if (n < 2) throw ValidationError("jackknife_variance: need at least 2 replicates");
  double mean = 0.0;
  for (double v : loo_stats) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : loo_stats) ss += (v - mean) * (v - mean);
  return (double(n - 1) / n) * ss;
}

JackknifeReplicates jackknife_replicates(const ArmModel& arm,
                                         const std::vector<double>& times) {
  const int n = static_cast<int>(arm.frame.subjects.size());
  if (n < 3) throw ValidationError("jackknife: need at least 3 subjects");
  const int nt = static_cast<int>(times.size());
  const int na = static_cast<int>(arm.alphas.size());

  EngineOptions warm = arm.options;
  warm.intensity.gamma_start = arm.intensity.gamma;
  warm.outcome.theta_start = arm.outcome.theta;
  warm.outcome.h_start =
      arm.options.mode == SIMode::Norm1 ? arm.outcome.hstar : arm.outcome.h;
  warm.outcome.max_evals = arm.options.jackknife_max_evals;
  warm.threads = 1;

  JackknifeReplicates reps;
  reps.means.assign(n, Eigen::MatrixXd::Zero(nt, na));
  reps.valid.assign(n, 1);
  std::vector<std::string> failed(n);

  parallel_for(n, arm.options.threads, [&](int r) {
    TrialFrame minus = arm.frame;
    minus.subjects.erase(minus.subjects.begin() + r);
    try {
      ArmModel refit = fit_arm(minus, warm);
      for (int t = 0; t < nt; ++t) {
        for (int a = 0; a < na; ++a) {
          reps.means[r](t, a) = refit.mean_at(times[t], a);
        }
      }
    } catch (const std::exception&) {
      reps.valid[r] = 0;
      failed[r] = arm.frame.subjects[r].id;
    }
  });
  for (int r = 0; r < n; ++r) {
    if (!reps.valid[r]) reps.failed_ids.push_back(failed[r]);
  }
  return reps;
}

ResultTable jackknife(const ArmModel& arm, const std::vector<double>& times) {
  if (times.empty()) throw ValidationError("jackknife: empty time list");
  JackknifeReplicates reps = jackknife_replicates(arm, times);
  const int n = static_cast<int>(reps.means.size());
  const int n_fail = static_cast<int>(reps.failed_ids.size());
  if (n_fail > 0.05 * n) {
    std::string msg = "jackknife: too many failed replicates (" +
                      std::to_string(n_fail) + "/" + std::to_string(n) + "):";
    for (const auto& id : reps.failed_ids) msg += " " + id;
    throw FitError(msg);
  }

  ResultTable table;
  table.columns = {"time", "alpha", "mean", "var", "mean_jackknife_var"};
  for (std::size_t t = 0; t < times.size(); ++t) {
    for (std::size_t a = 0; a < arm.alphas.size(); ++a) {
      std::vector<double> loo;
      loo.reserve(n);
      for (int r = 0; r < n; ++r) {
        if (reps.valid[r]) loo.push_back(reps.means[r](t, a));
      }
      table.rows.push_back({times[t], arm.alphas[a],
                            arm.mean_at(times[t], static_cast<int>(a)),
                            arm.if_var_at(times[t], static_cast<int>(a)),
                            jackknife_variance(loo)});
    }
  }
  return table;
}

ResultTable treatment_effect(const SensitivityModel& model,
                             const std::vector<double>& times) {
  if (times.empty()) throw ValidationError("treatment_effect: empty time list");
  ResultTable table;
  table.columns = {"time",           "alpha_control", "alpha_treatment",
                   "mean_treatment", "mean_control",  "mean_effect",
                   "var_effect"};
  for (double t : times) {
    for (std::size_t ac = 0; ac < model.control.alphas.size(); ++ac) {
      for (std::size_t at = 0; at < model.treatment.alphas.size(); ++at) {
        double mt = model.treatment.mean_at(t, static_cast<int>(at));
        double mc = model.control.mean_at(t, static_cast<int>(ac));
        double vt = model.treatment.if_var_at(t, static_cast<int>(at));
        double vc = model.control.if_var_at(t, static_cast<int>(ac));
        table.rows.push_back({t, model.control.alphas[ac], model.treatment.alphas[at],
                              mt, mc, mt - mc, vt + vc});
      }
    }
  }
  return table;
}

std::vector<double> restrict_alpha_range(const ArmModel& arm, double mu_min,
                                         double mu_max, double spacing) {
  if (!(mu_min < mu_max)) {
    throw ValidationError("restrict_alpha_range: require mu_min < mu_max");
  }
  if (!(spacing > 0.0)) {
    throw ValidationError("restrict_alpha_range: require spacing > 0");
  }
  std::vector<double> retained;
  for (std::size_t a = 0; a < arm.alphas.size(); ++a) {
    bool ok = true;
    for (const auto& basis : arm.bases) {
      int npts =
          std::max(2, static_cast<int>(std::ceil((basis.t2() - basis.t1()) / spacing)) +
                          1);
      for (int i = 0; i < npts && ok; ++i) {
        double t = basis.t1() + (basis.t2() - basis.t1()) * i / (npts - 1);
        double mu = arm.mean_at(t, static_cast<int>(a));
        if (mu < mu_min || mu > mu_max) ok = false;
      }
      if (!ok) break;
    }
    if (ok) retained.push_back(arm.alphas[a]);
  }
  return retained;
}

}  // namespace sensiat
