#pragma once

#include <Eigen/Dense>
#include <functional>

#include "sensiat/common.hpp"

namespace sensiat {

using VectorFn = std::function<Eigen::VectorXd(double)>;

enum class QuadMethod { Adaptive, Fixed };

// Recursive Simpson with componentwise error control; error estimate
// |S_left + S_right - S_whole| / 15 <= tol * (local interval / whole interval).
Eigen::VectorXd adaptive_simpson(const VectorFn& f, double a, double b, double tol,
                                 int max_depth = 30);

// Composite trapezoid on `resolution` uniformly spaced points (>= 2).
Eigen::VectorXd fixed_trapezoid(const VectorFn& f, double a, double b, int resolution);

// Composite trapezoid with grid spacing at most `delta`.
Eigen::VectorXd fixed_trapezoid_delta(const VectorFn& f, double a, double b, double delta);

}  // namespace sensiat
