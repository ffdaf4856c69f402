#include "sensiat/quadrature.hpp"

#include <cmath>

namespace sensiat {

namespace {

Eigen::VectorXd simpson_rec(const VectorFn& f, double a, double b,
                            const Eigen::VectorXd& fa, const Eigen::VectorXd& fm,
                            const Eigen::VectorXd& fb, const Eigen::VectorXd& whole,
                            double tol_per_len, int depth, int max_depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  Eigen::VectorXd flm = f(lm), frm = f(rm);
  double h = b - a;
  Eigen::VectorXd left = (h / 12.0) * (fa + 4.0 * flm + fm);
  Eigen::VectorXd right = (h / 12.0) * (fm + 4.0 * frm + fb);
  Eigen::VectorXd sum = left + right;
  Eigen::VectorXd err = (sum - whole) / 15.0;
  if (err.cwiseAbs().maxCoeff() <= tol_per_len * h) {
    return sum + err;  // Richardson correction
  }
  if (depth >= max_depth) {
    throw FitError("adaptive_simpson: max recursion depth exceeded on [" +
                   std::to_string(a) + ", " + std::to_string(b) + "]");
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, tol_per_len, depth + 1, max_depth) +
         simpson_rec(f, m, b, fm, frm, fb, right, tol_per_len, depth + 1, max_depth);
}

}  // namespace

Eigen::VectorXd adaptive_simpson(const VectorFn& f, double a, double b, double tol,
                                 int max_depth) {
  if (!(a < b)) throw ValidationError("adaptive_simpson: require a < b");
  if (!(tol > 0.0)) throw ValidationError("adaptive_simpson: require tol > 0");
  double m = 0.5 * (a + b);
  Eigen::VectorXd fa = f(a), fm = f(m), fb = f(b);
  Eigen::VectorXd whole = ((b - a) / 6.0) * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol / (b - a), 0, max_depth);
}

Eigen::VectorXd fixed_trapezoid(const VectorFn& f, double a, double b, int resolution) {
  if (resolution < 2) throw ValidationError("fixed_trapezoid: resolution must be >= 2");
  double h = (b - a) / (resolution - 1);
  Eigen::VectorXd acc = 0.5 * (f(a) + f(b));
  for (int i = 1; i < resolution - 1; ++i) acc += f(a + i * h);
  return acc * h;
}

Eigen::VectorXd fixed_trapezoid_delta(const VectorFn& f, double a, double b, double delta) {
  if (!(delta > 0.0)) throw ValidationError("fixed_trapezoid: delta must be > 0");
  int resolution = std::max(2, static_cast<int>(std::ceil((b - a) / delta)) + 1);
  return fixed_trapezoid(f, a, b, resolution);
}

}  // namespace sensiat
