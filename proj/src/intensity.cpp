#include "sensiat/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sensiat {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

IntensityFormula IntensityFormula::defaults() {
  IntensityFormula f;
  f.terms = {"prev_outcome"};
  return f;
}

IntensityFormula IntensityFormula::parse(const std::string& text) {
  auto tilde = text.find('~');
  if (tilde == std::string::npos) throw ValidationError("intensity formula: missing '~'");
  std::string lhs = trim(text.substr(0, tilde));
  if (!lhs.empty() && lhs.find("event(") != 0) {
    throw ValidationError("intensity formula: left side must be event(prev_time, time, observed)");
  }
  std::string rhs = text.substr(tilde + 1);
  auto bar = rhs.find('|');
  if (bar != std::string::npos) {
    std::string strata = trim(rhs.substr(bar + 1));
    if (strata != "strata(visit_number)") {
      throw ValidationError("intensity formula: only strata(visit_number) is supported");
    }
    rhs = rhs.substr(0, bar);
  }
  IntensityFormula f;
  std::stringstream ss(rhs);
  std::string term;
  while (std::getline(ss, term, '+')) {
    term = trim(term);
    if (term.empty() || term == "1") continue;
    f.terms.push_back(term);
  }
  return f;
}

std::string IntensityFormula::to_string() const {
  std::string s = "event(prev_time, time, observed) ~ ";
  if (terms.empty()) s += "1";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) s += " + ";
    s += terms[i];
  }
  return s + " | strata(visit_number)";
}

IntensityDesign build_intensity_design(const TrialFrame& frame,
                                       const std::vector<CountingProcessRecord>& cp,
                                       const IntensityFormula& formula) {
  IntensityDesign design;

  // Collect categorical levels across the frame; first level is the reference.
  for (const auto& term : formula.terms) {
    if (std::find(frame.cat_cov_names.begin(), frame.cat_cov_names.end(), term) !=
        frame.cat_cov_names.end()) {
      std::vector<std::string> levels;
      for (const auto& s : frame.subjects) {
        for (const auto& r : s.rows) {
          auto it = r.cat_cov.find(term);
          if (it != r.cat_cov.end() &&
              std::find(levels.begin(), levels.end(), it->second) == levels.end()) {
            levels.push_back(it->second);
          }
        }
      }
      std::sort(levels.begin(), levels.end());
      design.cat_levels[term] = levels;
    }
  }

  for (const auto& term : formula.terms) {
    auto lv = design.cat_levels.find(term);
    if (lv == design.cat_levels.end()) {
      design.colnames.push_back(term);
    } else {
      for (std::size_t l = 1; l < lv->second.size(); ++l) {
        design.colnames.push_back(term + "=" + lv->second[l]);
      }
    }
  }
  const int p = static_cast<int>(design.colnames.size());

  for (const auto& r : cp) {
    IntensityDesignRow row;
    row.entry = r.prev_time;
    row.exit = r.time;
    row.event = r.event;
    row.stratum = r.visit_number;
    row.subject_index = r.subject_index;
    if (!(row.entry < row.exit)) {
      throw ValidationError("intensity design: entry >= exit for subject index " +
                            std::to_string(r.subject_index));
    }
    row.z = Eigen::VectorXd::Zero(p);
    int c = 0;
    const AssessmentRecord& rec = frame.subjects[r.subject_index].rows[r.row_index];
    for (const auto& term : formula.terms) {
      auto lv = design.cat_levels.find(term);
      if (lv != design.cat_levels.end()) {
        auto it = rec.cat_cov.find(term);
        if (it == rec.cat_cov.end()) {
          throw ValidationError("missing categorical covariate " + term);
        }
        for (std::size_t l = 1; l < lv->second.size(); ++l) {
          row.z[c++] = (it->second == lv->second[l]) ? 1.0 : 0.0;
        }
      } else if (term == "prev_outcome") {
        row.z[c++] = r.prev_outcome;
      } else if (term == "time") {
        row.z[c++] = r.time;
      } else if (term == "delta_time") {
        row.z[c++] = r.delta_time;
      } else {
        auto it = rec.num_cov.find(term);
        if (it == rec.num_cov.end() || is_missing(it->second)) {
          throw ValidationError("missing covariate " + term + " on a design row");
        }
        row.z[c++] = it->second;
      }
    }
    design.rows.push_back(std::move(row));
    design.n_strata = std::max(design.n_strata, r.visit_number);
  }
  return design;
}

namespace {

// Per-stratum row indices and sorted distinct event times.
struct StratumIndex {
  std::vector<int> rows;
  std::vector<double> event_times;
};

std::vector<StratumIndex> index_strata(const IntensityDesign& design) {
  std::vector<StratumIndex> idx(design.n_strata);
  for (int r = 0; r < static_cast<int>(design.rows.size()); ++r) {
    const auto& row = design.rows[r];
    idx[row.stratum - 1].rows.push_back(r);
    if (row.event) idx[row.stratum - 1].event_times.push_back(row.exit);
  }
  for (auto& s : idx) {
    std::sort(s.event_times.begin(), s.event_times.end());
    s.event_times.erase(std::unique(s.event_times.begin(), s.event_times.end()),
                        s.event_times.end());
  }
  return idx;
}

}  // namespace

double partial_loglik(const Eigen::VectorXd& gamma, const IntensityDesign& design,
                      Eigen::VectorXd* gradient, Eigen::MatrixXd* hessian) {
  if (design.rows.empty()) throw ValidationError("partial_loglik: empty design");
  const int p = static_cast<int>(gamma.size());
  double ll = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);

  std::vector<double> eta(design.rows.size());
  for (std::size_t r = 0; r < design.rows.size(); ++r) {
    eta[r] = std::exp(gamma.dot(design.rows[r].z));
  }

  auto strata = index_strata(design);
  for (const auto& s : strata) {
    for (double t : s.event_times) {
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
      int d = 0;
      Eigen::VectorXd zsum = Eigen::VectorXd::Zero(p);
      for (int r : s.rows) {
        const auto& row = design.rows[r];
        if (row.entry < t && t <= row.exit) {
          s0 += eta[r];
          s1.noalias() += eta[r] * row.z;
          s2.noalias() += eta[r] * (row.z * row.z.transpose());
        }
        if (row.event && row.exit == t) {
          ++d;
          zsum += row.z;
        }
      }
      ll += gamma.dot(zsum) - d * std::log(s0);
      if (gradient || hessian) {
        Eigen::VectorXd zbar = s1 / s0;
        grad += zsum - d * zbar;
        hess.noalias() -= d * (s2 / s0 - zbar * zbar.transpose());
      }
    }
  }
  if (gradient) *gradient = grad;
  if (hessian) *hessian = hess;
  return ll;
}

std::vector<BaselineSteps> breslow_cumulative_baseline(const Eigen::VectorXd& gamma,
                                                       const IntensityDesign& design) {
  std::vector<double> eta(design.rows.size());
  for (std::size_t r = 0; r < design.rows.size(); ++r) {
    eta[r] = std::exp(gamma.dot(design.rows[r].z));
  }
  auto strata = index_strata(design);
  std::vector<BaselineSteps> out(design.n_strata);
  for (int k = 0; k < design.n_strata; ++k) {
    const auto& s = strata[k];
    for (double t : s.event_times) {
      double s0 = 0.0;
      int d = 0;
      for (int r : s.rows) {
        const auto& row = design.rows[r];
        if (row.entry < t && t <= row.exit) s0 += eta[r];
        if (row.event && row.exit == t) ++d;
      }
      out[k].times.push_back(t);
      out[k].jumps.push_back(d / s0);
    }
  }
  return out;
}

IntensityFit fit_andersen_gill(const IntensityDesign& design, const IntensityOptions& opts) {
  const int p = static_cast<int>(design.colnames.size());
  IntensityFit fit;
  fit.kernel = opts.kernel;
  fit.colnames = design.colnames;
  fit.cat_levels = design.cat_levels;

  Eigen::VectorXd gamma =
      opts.gamma_start ? *opts.gamma_start : Eigen::VectorXd::Zero(p);
  if (gamma.size() != p) throw ValidationError("gamma_start dimension mismatch");

  if (p == 0) {
    fit.gamma = gamma;
    fit.gamma_cov = Eigen::MatrixXd(0, 0);
    fit.loglik = partial_loglik(gamma, design);
  } else {
    Eigen::VectorXd grad(p);
    Eigen::MatrixXd hess(p, p);
    double ll = partial_loglik(gamma, design, &grad, &hess);
    std::ostringstream trace;
    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
      if (grad.cwiseAbs().maxCoeff() < opts.grad_tol) break;
      Eigen::MatrixXd info = -hess;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      double scale = info.diagonal().cwiseAbs().maxCoeff();
      if (ldlt.info() != Eigen::Success || scale <= 0.0 ||
          ldlt.vectorD().minCoeff() < 1e-12 * scale) {
        throw FitError("intensity model not identifiable: singular information "
                       "(constant or collinear covariates within risk sets)");
      }
      Eigen::VectorXd step = ldlt.solve(grad);
      double t = 1.0;
      double new_ll = 0.0;
      Eigen::VectorXd cand;
      int halvings = 0;
      for (; halvings <= 30; ++halvings) {
        cand = gamma + t * step;
        new_ll = partial_loglik(cand, design);
        if (new_ll >= ll || std::abs(new_ll - ll) < 1e-14 * (1.0 + std::abs(ll))) break;
        t *= 0.5;
      }
      if (halvings > 30) {
        throw FitError("intensity fit: step halving failed at iteration " +
                       std::to_string(iter) + trace.str());
      }
      double rel = std::abs(new_ll - ll) / (1.0 + std::abs(ll));
      gamma = cand;
      ll = partial_loglik(gamma, design, &grad, &hess);
      trace << "\n  iter " << iter << ": loglik=" << ll
            << " maxgrad=" << grad.cwiseAbs().maxCoeff();
      if (rel < opts.loglik_rel_tol) break;
    }
    if (iter >= opts.max_iter && grad.cwiseAbs().maxCoeff() >= opts.grad_tol) {
      throw FitError("intensity fit did not converge in " + std::to_string(opts.max_iter) +
                     " iterations" + trace.str());
    }
    Eigen::MatrixXd info = -hess;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    double scale = info.diagonal().cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || scale <= 0.0 ||
        ldlt.vectorD().minCoeff() < 1e-12 * scale) {
      throw FitError("intensity model not identifiable at optimum");
    }
    fit.gamma = gamma;
    fit.gamma_cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    fit.loglik = ll;
    fit.iterations = iter;
  }

  fit.formula.terms.clear();  // filled by caller when known
  fit.baseline = breslow_cumulative_baseline(fit.gamma, design);
  for (int k = 0; k < static_cast<int>(fit.baseline.size()); ++k) {
    if (fit.baseline[k].times.empty()) {
      fit.warnings.push_back("stratum " + std::to_string(k + 1) +
                             " has no events; baseline intensity is zero");
    }
  }
  fit.bandwidth = opts.bandwidth ? *opts.bandwidth : select_bandwidth(fit.baseline);
  if (!(fit.bandwidth > 0.0)) throw ValidationError("bandwidth must be > 0");
  return fit;
}

double IntensityFit::baseline_intensity(int k, double t) const {
  if (k < 1 || k > n_strata()) {
    throw ValidationError("unknown stratum " + std::to_string(k));
  }
  const BaselineSteps& b = baseline[k - 1];
  const double inv_b = 1.0 / bandwidth;
  double acc = 0.0;
  for (std::size_t j = 0; j < b.times.size(); ++j) {
    acc += kernel_value(kernel, (t - b.times[j]) * inv_b) * b.jumps[j];
  }
  return acc * inv_b;
}

double IntensityFit::evaluate(double t, const Eigen::VectorXd& z, int k) const {
  return baseline_intensity(k, t) * std::exp(gamma.dot(z));
}

namespace {

// Blocked quartic fit; returns (theta22, theta24, sigma2, rss).
struct BlockFit {
  double theta22 = 0.0, theta24 = 0.0, sigma2 = 0.0, rss = 0.0;
  bool ok = false;
};

BlockFit blocked_quartic(const std::vector<double>& x, const std::vector<double>& y,
                         int nblocks) {
  const int n = static_cast<int>(x.size());
  BlockFit out;
  double rss = 0.0, th22 = 0.0, th24 = 0.0;
  for (int b = 0; b < nblocks; ++b) {
    int lo = b * n / nblocks, hi = (b + 1) * n / nblocks;
    int m = hi - lo;
    if (m < 6) return out;  // not enough points per block
    Eigen::MatrixXd X(m, 5);
    Eigen::VectorXd Y(m);
    double xc = 0.0;
    for (int i = lo; i < hi; ++i) xc += x[i];
    xc /= m;
    for (int i = 0; i < m; ++i) {
      double u = x[lo + i] - xc;
      double v = 1.0;
      for (int c = 0; c < 5; ++c) {
        X(i, c) = v;
        v *= u;
      }
      Y(i) = y[lo + i];
    }
    Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
    rss += (Y - X * beta).squaredNorm();
    for (int i = 0; i < m; ++i) {
      double u = x[lo + i] - xc;
      double m2 = 2.0 * beta[2] + 6.0 * beta[3] * u + 12.0 * beta[4] * u * u;
      double m4 = 24.0 * beta[4];
      th22 += m2 * m2;
      th24 += m2 * m4;
    }
  }
  out.rss = rss;
  out.theta22 = th22 / n;
  out.theta24 = th24 / n;
  int dof = n - 5 * nblocks;
  if (dof <= 0) return out;
  out.sigma2 = rss / dof;
  out.ok = true;
  return out;
}

}  // namespace

double select_bandwidth(const std::vector<BaselineSteps>& baseline) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& b : baseline) {
    for (std::size_t j = 0; j < b.times.size(); ++j) {
      pairs.emplace_back(b.times[j], b.jumps[j]);
    }
  }
  const int n = static_cast<int>(pairs.size());
  if (n < 10) {
    throw ValidationError("select_bandwidth: fewer than 10 events; specify the "
                          "bandwidth manually");
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = pairs[i].first;
    y[i] = pairs[i].second;
  }
  double a = x.front(), b = x.back();
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= (n - 1);
  double silverman = 1.06 * std::sqrt(var) * std::pow(n, -0.2);
  if (!(silverman > 0.0)) {
    throw ValidationError("select_bandwidth: degenerate times (zero spread)");
  }

  // Block count via Mallows Cp, as in the standard direct plug-in recipe.
  int nmax = std::max(1, std::min(5, n / 20));
  BlockFit ref = blocked_quartic(x, y, nmax);
  if (!ref.ok) return silverman;
  int best_nb = 1;
  double best_cp = std::numeric_limits<double>::infinity();
  for (int nb = 1; nb <= nmax; ++nb) {
    BlockFit f = blocked_quartic(x, y, nb);
    if (!f.ok) continue;
    double cp = f.rss / (ref.rss / (n - 5 * nmax)) - (n - 10 * nb);
    if (cp < best_cp) {
      best_cp = cp;
      best_nb = nb;
    }
  }
  BlockFit pilot = blocked_quartic(x, y, best_nb);
  if (!pilot.ok || !(pilot.sigma2 > 0.0) || !(std::abs(pilot.theta24) > 0.0)) {
    return silverman;
  }

  // Pilot bandwidth for the local-cubic estimate of theta22 (Gaussian constants).
  const double k4_0 = 3.0 / std::sqrt(2.0 * M_PI);
  double g = std::pow(2.0 * k4_0 * pilot.sigma2 * (b - a) / (std::abs(pilot.theta24) * n),
                      1.0 / 7.0);
  if (!(g > 0.0) || !std::isfinite(g)) return silverman;

  // Local cubic fits with bandwidth g -> theta22.
  double th22 = 0.0;
  bool th_ok = true;
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix4d XtWX = Eigen::Matrix4d::Zero();
    Eigen::Vector4d XtWY = Eigen::Vector4d::Zero();
    for (int j = 0; j < n; ++j) {
      double u = (x[j] - x[i]) / g;
      double w = std::exp(-0.5 * u * u);
      double pw[4];
      double v = 1.0;
      for (int c = 0; c < 4; ++c) {
        pw[c] = v;
        v *= (x[j] - x[i]);
      }
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) XtWX(r, c) += w * pw[r] * pw[c];
        XtWY(r) += w * pw[r] * y[j];
      }
    }
    Eigen::FullPivLU<Eigen::Matrix4d> lu(XtWX);
    if (!lu.isInvertible()) {
      th_ok = false;
      break;
    }
    Eigen::Vector4d beta = lu.solve(XtWY);
    double m2 = 2.0 * beta[2];
    th22 += m2 * m2;
  }
  if (!th_ok) return silverman;
  th22 /= n;
  if (!(th22 > 0.0)) return silverman;

  const double rk = 1.0 / (2.0 * std::sqrt(M_PI));  // R(K), Gaussian
  double h = std::pow(rk * pilot.sigma2 * (b - a) / (th22 * n), 0.2);
  // A wildly out-of-range plug-in value means the pilot failed.
  if (!std::isfinite(h) || !(h > 0.0) || h > 0.5 * (b - a)) return silverman;
  return h;
}

}  // namespace sensiat
