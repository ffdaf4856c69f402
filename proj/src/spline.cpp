#include "sensiat/spline.hpp"

#include <algorithm>
#include <cmath>

namespace sensiat {

SplineBasisSpec make_basis(const std::vector<double>& knots, int degree) {
  if (knots.size() < 2) throw ValidationError("need at least 2 knots");
  if (degree < 0) throw ValidationError("degree must be >= 0");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (knots[i] <= knots[i - 1]) throw ValidationError("knots must be strictly increasing");
  }
  SplineBasisSpec spec;
  spec.knots = knots;
  spec.degree = degree;
  for (int i = 0; i < degree; ++i) spec.full_knots.push_back(knots.front());
  spec.full_knots.insert(spec.full_knots.end(), knots.begin(), knots.end());
  for (int i = 0; i < degree; ++i) spec.full_knots.push_back(knots.back());
  return spec;
}

Eigen::VectorXd evaluate_basis(const SplineBasisSpec& spec, double t) {
  if (t < spec.t1() || t > spec.t2()) {
    throw ValidationError("basis evaluation outside interval: t=" + std::to_string(t));
  }
  const auto& U = spec.full_knots;
  const int p = spec.degree;
  const int d = spec.dimension();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);

  // Locate the knot span mu with U[mu] <= t < U[mu+1]; clamp t = t2 into the
  // last nonempty span.
  int mu = p;
  {
    int hi = static_cast<int>(U.size()) - p - 2;  // last valid span index
    while (mu < hi && t >= U[mu + 1]) ++mu;
  }

  // Cox-de Boor triangle: N[j] holds the values of B_{mu-p+j,p}(t).
  std::vector<double> N(p + 1, 0.0);
  N[0] = 1.0;
  for (int k = 1; k <= p; ++k) {
    double saved = 0.0;
    for (int j = 0; j < k; ++j) {
      int idx = mu - k + 1 + j;
      double denom = U[idx + k] - U[idx];
      double term = denom > 0.0 ? N[j] / denom : 0.0;
      N[j] = saved + (U[idx + k] - t) * term;
      saved = (t - U[idx]) * term;
    }
    N[k] = saved;
  }
  for (int j = 0; j <= p; ++j) {
    int idx = mu - p + j;
    if (idx >= 0 && idx < d) out[idx] = N[j];
  }
  return out;
}

void gauss_legendre(int n, std::vector<double>* nodes, std::vector<double>* weights) {
  nodes->assign(n, 0.0);
  weights->assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Chebyshev initial guess, Newton refinement on P_n.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      if (n == 1) { p1 = x; }
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double pn = (n == 1) ? x : p1;
      double pnm1 = (n == 1) ? 1.0 : p0;
      dp = n * (x * pn - pnm1) / (x * x - 1.0);
      double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    (*nodes)[i] = -x;
    (*nodes)[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    (*weights)[i] = w;
    (*weights)[n - 1 - i] = w;
  }
  if (n % 2 == 1 && n > 1) {
    // midpoint node is exactly 0; recompute its weight directly
    double x = 0.0, p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    (*nodes)[n / 2] = 0.0;
    (*weights)[n / 2] = 2.0 / (dp * dp);
  }
  if (n == 1) {
    (*nodes)[0] = 0.0;
    (*weights)[0] = 2.0;
  }
}

Eigen::MatrixXd gram_matrix(const SplineBasisSpec& spec) {
  const int d = spec.dimension();
  // Integrand is piecewise polynomial of degree <= 2*degree per span.
  const int nq = spec.degree + 1;
  std::vector<double> xs, ws;
  gauss_legendre(nq, &xs, &ws);

  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t s = 0; s + 1 < spec.knots.size(); ++s) {
    double a = spec.knots[s], b = spec.knots[s + 1];
    double c = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int q = 0; q < nq; ++q) {
      double t = c + half * xs[q];
      Eigen::VectorXd B = evaluate_basis(spec, t);
      V.noalias() += (half * ws[q]) * (B * B.transpose());
    }
  }
  return V;
}

double mean_curve(const SplineBasisSpec& spec, const Eigen::VectorXd& beta, double t) {
  if (beta.size() != spec.dimension()) {
    throw ValidationError("beta dimension mismatch: " + std::to_string(beta.size()) +
                          " vs basis dimension " + std::to_string(spec.dimension()));
  }
  return evaluate_basis(spec, t).dot(beta);
}

}  // namespace sensiat
