#include "sensiat/single_index.hpp"

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

OutcomeTerm parse_term(const std::string& raw) {
  std::string t = trim(raw);
  OutcomeTerm term;
  if (t.rfind("ns(", 0) == 0 && t.back() == ')') {
    std::string inner = t.substr(3, t.size() - 4);
    auto comma = inner.find(',');
    if (comma == std::string::npos) throw ValidationError("ns() needs df: " + t);
    term.kind = OutcomeTerm::Kind::NaturalSpline;
    term.var = trim(inner.substr(0, comma));
    std::string dfpart = trim(inner.substr(comma + 1));
    if (dfpart.rfind("df", 0) == 0) {
      auto eq = dfpart.find('=');
      if (eq == std::string::npos) throw ValidationError("ns() needs df=k: " + t);
      dfpart = trim(dfpart.substr(eq + 1));
    }
    term.df = std::stoi(dfpart);
    if (term.df < 1) throw ValidationError("ns() df must be >= 1");
  } else if (t.rfind("scale(", 0) == 0 && t.back() == ')') {
    term.kind = OutcomeTerm::Kind::Scale;
    term.var = trim(t.substr(6, t.size() - 7));
  } else {
    term.kind = OutcomeTerm::Kind::Raw;
    term.var = t;
  }
  if (term.var.empty()) throw ValidationError("empty variable in term: " + raw);
  if (term.kind == OutcomeTerm::Kind::NaturalSpline &&
      (term.var == "time" || term.var == "delta_time")) {
    throw ValidationError("time predictors must be piecewise linear; ns(" + term.var +
                          ") is not allowed");
  }
  return term;
}

}  // namespace

std::string OutcomeTerm::to_string() const {
  switch (kind) {
    case Kind::Raw: return var;
    case Kind::Scale: return "scale(" + var + ")";
    case Kind::NaturalSpline: return "ns(" + var + ", df=" + std::to_string(df) + ")";
  }
  return "?";
}

OutcomeFormula OutcomeFormula::defaults() {
  return parse("outcome ~ ns(prev_outcome, df=3) + scale(time) + scale(delta_time)");
}

OutcomeFormula OutcomeFormula::parse(const std::string& text) {
  auto tilde = text.find('~');
  std::string rhs = tilde == std::string::npos ? text : text.substr(tilde + 1);
  if (tilde != std::string::npos) {
    std::string lhs = trim(text.substr(0, tilde));
    if (!lhs.empty() && lhs != "outcome") {
      throw ValidationError("outcome formula must model `outcome`");
    }
  }
  OutcomeFormula f;
  // split on + at depth 0
  std::string cur;
  int depth = 0;
  for (char c : rhs) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == '+' && depth == 0) {
      if (!trim(cur).empty() && trim(cur) != "-1" && trim(cur) != "1") {
        f.terms.push_back(parse_term(cur));
      }
      cur.clear();
    } else {
      cur += c;
    }
  }
  std::string last = trim(cur);
  if (!last.empty() && last != "-1" && last != "1") f.terms.push_back(parse_term(cur));
  if (f.terms.empty()) throw ValidationError("outcome formula has no terms");
  return f;
}

OutcomeFormula OutcomeFormula::modified(const std::string& mods) const {
  // tokens are "+ term" / "- term" sequences; split on +/- at depth 0
  OutcomeFormula out = *this;
  std::vector<std::pair<char, std::string>> edits;
  char sign = '+';
  std::string cur;
  int depth = 0;
  for (char c : mods) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if ((c == '+' || c == '-') && depth == 0) {
      if (!trim(cur).empty()) edits.emplace_back(sign, trim(cur));
      sign = c;
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) edits.emplace_back(sign, trim(cur));

  for (const auto& [s, text] : edits) {
    if (text == "." || text == "1" || text == "-1") continue;
    OutcomeTerm term = parse_term(text);
    if (s == '+') {
      if (std::find(out.terms.begin(), out.terms.end(), term) == out.terms.end()) {
        out.terms.push_back(term);
      }
    } else {
      auto it = std::find(out.terms.begin(), out.terms.end(), term);
      if (it == out.terms.end()) {
        throw ValidationError("model modification removes absent term: " + text);
      }
      out.terms.erase(it);
    }
  }
  if (out.terms.empty()) throw ValidationError("model modifications removed every term");
  return out;
}

std::string OutcomeFormula::to_string() const {
  std::string s = "outcome ~ ";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) s += " + ";
    s += terms[i].to_string();
  }
  return s;
}

std::vector<double> natural_spline_basis(const std::vector<double>& knots, double x) {
  // Truncated-power natural cubic basis: linear beyond the boundary knots.
  const int K = static_cast<int>(knots.size());
  if (K < 2) throw ValidationError("natural spline needs >= 2 knots");
  auto dk = [&](int k) {
    auto cube_pos = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    return (cube_pos(x - knots[k]) - cube_pos(x - knots[K - 1])) /
           (knots[K - 1] - knots[k]);
  };
  std::vector<double> out;
  out.reserve(K - 1);
  out.push_back(x);
  for (int k = 0; k + 2 < K; ++k) {
    out.push_back(dk(k) - dk(K - 2));
  }
  return out;
}

Eigen::VectorXd OutcomeModelSpec::predictors(
    double prev_outcome, double time, double delta_time,
    const std::map<std::string, double>& num_cov) const {
  Eigen::VectorXd x(dim);
  int c = 0;
  for (const auto& ft : frozen) {
    double v;
    const std::string& name = ft.term.var;
    if (name == "prev_outcome") v = prev_outcome;
    else if (name == "time") v = time;
    else if (name == "delta_time") v = delta_time;
    else {
      auto it = num_cov.find(name);
      if (it == num_cov.end() || is_missing(it->second)) {
        throw ValidationError("missing predictor " + name);
      }
      v = it->second;
    }
    switch (ft.term.kind) {
      case OutcomeTerm::Kind::Raw:
        x[c++] = v;
        break;
      case OutcomeTerm::Kind::Scale:
        x[c++] = (v - ft.center) / ft.scale;
        break;
      case OutcomeTerm::Kind::NaturalSpline: {
        auto b = natural_spline_basis(ft.ns_knots, v);
        for (double bv : b) x[c++] = bv;
        break;
      }
    }
  }
  return x;
}

OutcomeDesign build_outcome_design(const TrialFrame& frame,
                                   const std::vector<CountingProcessRecord>& cp,
                                   const OutcomeFormula& formula) {
  std::vector<const CountingProcessRecord*> events;
  for (const auto& r : cp) {
    if (r.event) events.push_back(&r);
  }
  if (events.empty()) throw ValidationError("outcome design: no event rows");

  auto value_of = [&](const CountingProcessRecord& r, const std::string& name) {
    if (name == "prev_outcome") return r.prev_outcome;
    if (name == "time") return r.time;
    if (name == "delta_time") return r.delta_time;
    const auto& rec = frame.subjects[r.subject_index].rows[r.row_index];
    auto it = rec.num_cov.find(name);
    if (it == rec.num_cov.end() || is_missing(it->second)) {
      throw ValidationError("missing predictor " + name + " on an event row");
    }
    return it->second;
  };

  OutcomeDesign design;
  design.spec.formula = formula;
  for (const auto& term : formula.terms) {
    OutcomeModelSpec::FrozenTerm ft;
    ft.term = term;
    std::vector<double> vals;
    vals.reserve(events.size());
    for (auto* r : events) vals.push_back(value_of(*r, term.var));
    switch (term.kind) {
      case OutcomeTerm::Kind::Raw:
        design.spec.colnames.push_back(term.to_string());
        design.spec.dim += 1;
        break;
      case OutcomeTerm::Kind::Scale: {
        double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        double sd = vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 1.0;
        ft.center = mean;
        ft.scale = sd > 0.0 ? sd : 1.0;
        design.spec.colnames.push_back(term.to_string());
        design.spec.dim += 1;
        break;
      }
      case OutcomeTerm::Kind::NaturalSpline: {
        // df columns: boundary knots at the data range, df-1 interior knots at
        // the i/df quantiles.
        std::vector<double> sorted = vals;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> knots;
        knots.push_back(sorted.front());
        for (int i = 1; i < term.df; ++i) {
          double q = static_cast<double>(i) / term.df;
          double pos = q * (sorted.size() - 1);
          std::size_t lo = static_cast<std::size_t>(pos);
          double frac = pos - lo;
          double v = lo + 1 < sorted.size()
                         ? sorted[lo] * (1 - frac) + sorted[lo + 1] * frac
                         : sorted[lo];
          knots.push_back(v);
        }
        knots.push_back(sorted.back());
        // collapse duplicate knots (degenerate data)
        knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
        if (knots.size() < 2) {
          throw ValidationError("ns(" + term.var + "): degenerate training values");
        }
        ft.ns_knots = knots;
        for (std::size_t c = 0; c + 1 < knots.size(); ++c) {
          design.spec.colnames.push_back(term.to_string() + "[" + std::to_string(c) + "]");
        }
        design.spec.dim += static_cast<int>(knots.size()) - 1;
        break;
      }
    }
    design.spec.frozen.push_back(std::move(ft));
  }

  const int N = static_cast<int>(events.size());
  const int p = design.spec.dim;
  // sort rows by ascending outcome
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return events[a]->outcome < events[b]->outcome;
  });

  design.X.resize(N, p);
  design.Y.resize(N);
  design.subject.resize(N);
  for (int m = 0; m < N; ++m) {
    const CountingProcessRecord& r = *events[order[m]];
    const auto& rec = frame.subjects[r.subject_index].rows[r.row_index];
    design.X.row(m) =
        design.spec.predictors(r.prev_outcome, r.time, r.delta_time, rec.num_cov)
            .transpose();
    design.Y[m] = r.outcome;
    design.subject[m] = r.subject_index;
  }
  std::vector<int> distinct(design.subject);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  design.n_subjects = static_cast<int>(distinct.size());
  return design;
}

double psis(const Eigen::VectorXd& theta, double h, const OutcomeDesign& design,
            Kernel kernel) {
  if (design.n_subjects < 2) {
    throw ValidationError("psis: need at least 2 subjects for leave-one-out");
  }
  if (!(h > 0.0)) throw ValidationError("psis: bandwidth must be > 0");
  const int N = static_cast<int>(design.Y.size());
  Eigen::VectorXd s = design.X * theta;

  // tie-group bounds in the Y-sorted order
  std::vector<int> ub(N), lb(N);
  for (int m = 0; m < N;) {
    int e = m;
    while (e + 1 < N && design.Y[e + 1] == design.Y[m]) ++e;
    for (int j = m; j <= e; ++j) {
      lb[j] = m;
      ub[j] = e;
    }
    m = e + 1;
  }
  // row positions per subject (ascending)
  std::vector<std::vector<int>> subject_rows;
  {
    int max_subj = 0;
    for (int v : design.subject) max_subj = std::max(max_subj, v);
    subject_rows.resize(max_subj + 1);
    for (int m = 0; m < N; ++m) subject_rows[design.subject[m]].push_back(m);
  }

  const auto& ops = simd::active_ops();
  std::vector<double> w(N), P(N);
  double total_psis = 0.0, comp = 0.0;  // Kahan accumulation
  const double inv_h = 1.0 / h;

  for (int ik = 0; ik < N; ++ik) {
    ops.kernel_weights(kernel, s.data(), N, s[ik], inv_h, w.data());
    double run = 0.0;
    for (int m = 0; m < N; ++m) {
      run += w[m];
      P[m] = run;
    }
    const auto& rows_i = subject_rows[design.subject[ik]];
    double sub_total = 0.0;
    for (int r : rows_i) sub_total += w[r];
    double denom = P[N - 1] - sub_total;

    double local = 0.0;
    if (denom <= 0.0) {
      // empty leave-one-out neighborhood: worst-case error on every query
      local = static_cast<double>(N);
    } else {
      double acc = 0.0;
      std::size_t ptr = 0;
      const int lbi = lb[ik];
      for (int m = 0; m < N; ++m) {
        const int u = ub[m];
        while (ptr < rows_i.size() && rows_i[ptr] <= u) acc += w[rows_i[ptr++]];
        double F = (P[u] - acc) / denom;
        double e = (m >= lbi ? 1.0 : 0.0) - F;
        local += e * e;
      }
    }
    double yk = local - comp;
    double t = total_psis + yk;
    comp = (t - total_psis) - yk;
    total_psis = t;
  }
  return total_psis;
}

Eigen::VectorXd init_direction(const OutcomeDesign& design) {
  const int N = static_cast<int>(design.Y.size());
  const int p = static_cast<int>(design.X.cols());
  if (N < p + 2) throw ValidationError("init_direction: need at least p+2 rows");

  // collinearity check on the centered design
  Eigen::MatrixXd Xc = design.X.rowwise() - design.X.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[0] <= 0.0 || sv[p - 1] < 1e-10 * sv[0]) {
    Eigen::VectorXd null = svd.matrixV().col(p - 1);
    std::string cols;
    for (int j = 0; j < p; ++j) {
      if (std::abs(null[j]) > 0.3) {
        if (!cols.empty()) cols += ", ";
        cols += j < static_cast<int>(design.spec.colnames.size())
                    ? design.spec.colnames[j]
                    : "column " + std::to_string(j + 1);
      }
    }
    throw ValidationError("collinear predictors in outcome model: " + cols);
  }

  // local-linear gradient estimates with a rule-of-thumb product bandwidth
  Eigen::VectorXd hvec(p);
  for (int j = 0; j < p; ++j) {
    double sd = std::sqrt(Xc.col(j).squaredNorm() / (N - 1));
    hvec[j] = std::max(1e-8, 1.06 * sd * std::pow(N, -1.0 / (p + 4)));
  }
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd A(p + 1, p + 1);
  Eigen::VectorXd bvec(p + 1), xi(p + 1);
  for (int i = 0; i < N; ++i) {
    A.setZero();
    bvec.setZero();
    for (int j = 0; j < N; ++j) {
      double wexp = 0.0;
      for (int c = 0; c < p; ++c) {
        double u = (design.X(j, c) - design.X(i, c)) / hvec[c];
        wexp += u * u;
      }
      double w = std::exp(-0.5 * wexp);
      xi[0] = 1.0;
      xi.tail(p) = (design.X.row(j) - design.X.row(i)).transpose();
      A.noalias() += w * (xi * xi.transpose());
      bvec.noalias() += (w * design.Y[j]) * xi;
    }
    Eigen::VectorXd coef = A.ldlt().solve(bvec);
    Eigen::VectorXd grad = coef.tail(p);
    M.noalias() += grad * grad.transpose();
  }
  M /= N;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
  Eigen::VectorXd theta = eig.eigenvectors().col(p - 1);
  theta.normalize();
  for (int j = 0; j < p; ++j) {
    if (std::abs(theta[j]) > 1e-12) {
      if (theta[j] < 0.0) theta = -theta;
      break;
    }
  }
  return theta;
}

namespace {

// Derivative-free Nelder-Mead; converges when the simplex f-spread drops
// below abs_tol.  Returns the best point seen.
struct NMResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

NMResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& fn,
                     const Eigen::VectorXd& x0, double abs_tol, int max_evals) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> fs;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = fn(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  xs.push_back(x0);
  fs.push_back(eval(x0));
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd x = x0;
    x[j] += 0.1 * (std::abs(x0[j]) + 0.1);
    xs.push_back(x);
    fs.push_back(eval(x));
  }

  auto order = [&]() {
    std::vector<int> idx(n + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<Eigen::VectorXd> nx(n + 1);
    std::vector<double> nf(n + 1);
    for (int i = 0; i <= n; ++i) {
      nx[i] = xs[idx[i]];
      nf[i] = fs[idx[i]];
    }
    xs = std::move(nx);
    fs = std::move(nf);
  };

  bool converged = false;
  while (evals < max_evals) {
    order();
    if (fs[n] - fs[0] < abs_tol) {
      converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[i];
    centroid /= n;
    Eigen::VectorXd xr = centroid + (centroid - xs[n]);
    double fr = eval(xr);
    if (fr < fs[0]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[n]);
      double fe = eval(xe);
      if (fe < fr) {
        xs[n] = xe;
        fs[n] = fe;
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
    } else if (fr < fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (xs[n] - centroid);
      double fc = eval(xc);
      if (fc < fs[n]) {
        xs[n] = xc;
        fs[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
        }
      }
    }
  }
  order();
  return {xs[0], fs[0], evals, converged};
}

void fill_training(SingleIndexFit* fit, const OutcomeDesign& design) {
  fit->spec = design.spec;
  fit->train_y = design.Y;
  fit->train_index = design.X * fit->theta;
  fit->train_subject = design.subject;
}

double index_sd(const Eigen::VectorXd& s) {
  double mean = s.mean();
  double ss = 0.0;
  for (int i = 0; i < s.size(); ++i) ss += (s[i] - mean) * (s[i] - mean);
  return s.size() > 1 ? std::sqrt(ss / (s.size() - 1)) : 0.0;
}

}  // namespace

SingleIndexFit fit_fixed_coef(const OutcomeDesign& design, const SingleIndexOptions& opts) {
  const int p = static_cast<int>(design.X.cols());
  Eigen::VectorXd theta0 = opts.theta_start ? *opts.theta_start : init_direction(design);
  if (std::abs(theta0[0]) < 1e-12) {
    throw FitError("fixed-coef mode: first coefficient of the initial direction is "
                   "zero; use the fixed-bandwidth or norm-1 mode");
  }
  theta0 /= theta0[0];
  double h0 = opts.h_start ? *opts.h_start : 1.0;

  auto unpack = [&](const Eigen::VectorXd& u, Eigen::VectorXd* theta, double* h) {
    theta->resize(p);
    (*theta)[0] = 1.0;
    for (int j = 1; j < p; ++j) (*theta)[j] = u[j - 1];
    *h = std::exp(u[p - 1]);
  };
  Eigen::VectorXd u0(p);
  for (int j = 1; j < p; ++j) u0[j - 1] = theta0[j];
  u0[p - 1] = std::log(h0);

  auto fn = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd theta;
    double h;
    unpack(u, &theta, &h);
    return psis(theta, h, design, opts.kernel);
  };
  NMResult res = nelder_mead(fn, u0, opts.abs_tol, opts.max_evals);

  SingleIndexFit fit;
  fit.mode = SIMode::FixedCoef;
  fit.kernel = opts.kernel;
  unpack(res.x, &fit.theta, &fit.h);
  fit.evaluations = res.evals;
  fit.final_psis = res.f;
  fit.converged = res.converged;
  fill_training(&fit, design);
  return fit;
}

SingleIndexFit fit_fixed_bandwidth(const OutcomeDesign& design,
                                   const SingleIndexOptions& opts) {
  Eigen::VectorXd theta0 = opts.theta_start ? *opts.theta_start : init_direction(design);
  auto fn = [&](const Eigen::VectorXd& theta) {
    return psis(theta, 1.0, design, opts.kernel);
  };
  NMResult res = nelder_mead(fn, theta0, opts.abs_tol, opts.max_evals);

  SingleIndexFit fit;
  fit.mode = SIMode::FixedBandwidth;
  fit.kernel = opts.kernel;
  fit.theta = res.x;
  fit.h = 1.0;
  fit.evaluations = res.evals;
  fit.final_psis = res.f;
  fit.converged = res.converged;
  fill_training(&fit, design);
  return fit;
}

namespace {

double minimize_hstar(const std::function<double(double)>& g, double lo, double hi,
                      double start, BwMethod method, int* evals) {
  auto ev = [&](double x) {
    ++*evals;
    return g(x);
  };
  if (method == BwMethod::Grid) {
    const int npts = 50;
    double best_x = lo, best_f = std::numeric_limits<double>::infinity();
    for (int i = 0; i < npts; ++i) {
      double x = lo + (hi - lo) * i / (npts - 1);
      double f = ev(x);
      if (f < best_f) {
        best_f = f;
        best_x = x;
      }
    }
    return best_x;
  }
  if (method == BwMethod::BoundedQuasiNewton) {
    // 1-D projected quasi-Newton with finite differences; falls back to
    // golden section when curvature is unusable.
    double x = std::clamp(start, lo, hi);
    double eps = 1e-4 * (hi - lo);
    bool ok = true;
    for (int it = 0; it < 25; ++it) {
      double f0 = ev(x);
      double fp = ev(std::min(x + eps, hi));
      double fm = ev(std::max(x - eps, lo));
      double d1 = (fp - fm) / (2.0 * eps);
      double d2 = (fp - 2.0 * f0 + fm) / (eps * eps);
      if (!(d2 > 0.0) || !std::isfinite(d1)) {
        ok = false;
        break;
      }
      double xn = std::clamp(x - d1 / d2, lo, hi);
      if (std::abs(xn - x) < 1e-6 * (hi - lo)) {
        if (ev(xn) <= f0) x = xn;
        return x;
      }
      if (ev(xn) > f0) {
        // quadratic model failed; bisect toward the better side
        xn = 0.5 * (x + xn);
        if (ev(xn) > f0) {
          ok = false;
          break;
        }
      }
      x = xn;
    }
    if (ok) return x;
  }
  // golden section
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = ev(c), fd = ev(d);
  for (int it = 0; it < 60 && (b - a) > 1e-6 * (hi - lo); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = ev(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = ev(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

SingleIndexFit fit_norm1(const OutcomeDesign& design, const SingleIndexOptions& opts) {
  Eigen::VectorXd theta = opts.theta_start ? *opts.theta_start : init_direction(design);
  theta.normalize();
  const int p = static_cast<int>(theta.size());

  int evals = 0;
  auto psis_at = [&](const Eigen::VectorXd& th, double h) {
    ++evals;
    return psis(th, h, design, opts.kernel);
  };

  double hstar = opts.h_start ? *opts.h_start : 0.5;
  hstar = std::clamp(hstar, opts.bw_lo, opts.bw_hi);
  double sd = index_sd(design.X * theta);
  if (!(sd > 0.0)) throw FitError("norm-1 mode: degenerate index (zero variance)");
  double h = hstar * sd;
  double cur = psis_at(theta, h);

  SingleIndexFit fit;
  fit.trace.push_back(cur);

  for (int outer = 0; outer < 25; ++outer) {
    double prev = cur;

    // h-step: bounded scalar minimization over h* in [bw_lo, bw_hi]
    sd = index_sd(design.X * theta);
    int dummy = 0;
    double hs = minimize_hstar(
        [&](double x) { return psis_at(theta, x * sd); }, opts.bw_lo, opts.bw_hi, hstar,
        opts.bw_method, &dummy);
    double cand = psis_at(theta, hs * sd);
    if (cand <= cur) {
      hstar = hs;
      h = hs * sd;
      cur = cand;
      fit.trace.push_back(cur);
    }

    // theta-step: projected descent on the unit sphere
    Eigen::VectorXd grad(p);
    const double fd = 1e-5;
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd tp = theta;
      tp[j] += fd;
      tp.normalize();
      grad[j] = (psis_at(tp, h) - cur) / fd;
    }
    Eigen::VectorXd tan = grad - grad.dot(theta) * theta;
    double gn = tan.norm();
    if (gn > 1e-14) {
      double step = 0.3 / gn;
      bool accepted = false;
      for (int ls = 0; ls < 20; ++ls) {
        Eigen::VectorXd cand_theta = (theta - step * tan).normalized();
        double cf = psis_at(cand_theta, hstar * index_sd(design.X * cand_theta));
        if (cf < cur) {
          theta = cand_theta;
          sd = index_sd(design.X * theta);
          h = hstar * sd;
          cur = cf;
          fit.trace.push_back(cur);
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      (void)accepted;
    }

    if (!std::isfinite(cur)) {
      throw FitError("norm-1 fit diverged; trace length " +
                     std::to_string(fit.trace.size()));
    }
    if (std::abs(prev - cur) < 1e-6 * (1.0 + std::abs(prev))) {
      fit.converged = true;
      break;
    }
  }

  fit.mode = SIMode::Norm1;
  fit.kernel = opts.kernel;
  fit.theta = theta;
  fit.h = h;
  fit.hstar = hstar;
  fit.evaluations = evals;
  fit.final_psis = cur;
  fill_training(&fit, design);
  return fit;
}

double ConditionalDistribution::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) m += support[i] * weights[i];
  return m;
}

double ConditionalDistribution::cdf(double z) const {
  double c = 0.0;
  for (std::size_t i = 0; i < support.size() && support[i] <= z; ++i) c += weights[i];
  return c;
}

ConditionalDistribution nw_conditional_cdf(const SingleIndexFit& fit,
                                           const Eigen::VectorXd& x) {
  if (x.size() != fit.theta.size()) {
    throw ValidationError("nw_conditional_cdf: predictor dimension mismatch");
  }
  const int N = static_cast<int>(fit.train_y.size());
  if (N == 0) throw ValidationError("nw_conditional_cdf: untrained fit");
  double q = fit.theta.dot(x);

  const auto& ops = simd::active_ops();
  std::vector<double> w(N);
  double h = fit.h;
  double total = 0.0;
  bool fallback = false;
  for (int attempt = 0; attempt <= 10; ++attempt) {
    ops.kernel_weights(fit.kernel, fit.train_index.data(), N, q, 1.0 / h, w.data());
    total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total > 0.0) break;
    h *= 2.0;  // empty compact-kernel neighborhood
    fallback = true;
  }
  if (total <= 0.0) {
    // final fallback: 5 nearest index values, uniform weights
    std::vector<int> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + std::min(5, N), idx.end(),
                      [&](int a, int b) {
                        return std::abs(fit.train_index[a] - q) <
                               std::abs(fit.train_index[b] - q);
                      });
    std::fill(w.begin(), w.end(), 0.0);
    for (int i = 0; i < std::min(5, N); ++i) w[idx[i]] = 1.0;
    total = std::min(5, N);
    fallback = true;
  }

  ConditionalDistribution dist;
  dist.fallback_used = fallback;
  // train_y ascending: aggregate tied outcomes
  for (int m = 0; m < N;) {
    int e = m;
    double acc = w[m];
    while (e + 1 < N && fit.train_y[e + 1] == fit.train_y[m]) {
      ++e;
      acc += w[e];
    }
    dist.support.push_back(fit.train_y[m]);
    dist.weights.push_back(acc / total);
    m = e + 1;
  }
  return dist;
}

}  // namespace sensiat
