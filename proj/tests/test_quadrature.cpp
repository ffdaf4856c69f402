#include <cmath>

#include "doctest.h"
#include "sensiat/quadrature.hpp"

using namespace sensiat;

namespace {

VectorFn scalar_fn(double (*f)(double)) {
  return [f](double x) {
    Eigen::VectorXd v(1);
    v[0] = f(x);
    return v;
  };
}

}  // namespace

TEST_CASE("adaptive simpson is exact on constants and cubics") {
  auto c = scalar_fn(+[](double) { return 4.2; });
  CHECK(adaptive_simpson(c, 0.0, 3.0, 1e-8)[0] == doctest::Approx(12.6).epsilon(1e-14));

  auto cubic = scalar_fn(+[](double x) { return 2 * x * x * x - x * x + 3 * x - 5; });
  // antiderivative: x^4/2 - x^3/3 + 3x^2/2 - 5x
  double exact = (8.0 - 8.0 / 3.0 + 6.0 - 10.0) - 0.0;
  CHECK(std::abs(adaptive_simpson(cubic, 0.0, 2.0, 1e-6)[0] - exact) < 1e-12);
}

TEST_CASE("adaptive simpson matches closed forms within tolerance") {
  auto e = scalar_fn(+[](double x) { return std::exp(x); });
  CHECK(std::abs(adaptive_simpson(e, 0.0, 1.0, 1e-8)[0] - (std::exp(1.0) - 1.0)) <
        1e-8);

  // vector-valued integrand, componentwise control
  VectorFn f = [](double x) {
    Eigen::VectorXd v(2);
    v[0] = std::sin(x);
    v[1] = std::cos(3 * x);
    return v;
  };
  Eigen::VectorXd r = adaptive_simpson(f, 0.0, 2.0, 1e-9);
  CHECK(std::abs(r[0] - (1.0 - std::cos(2.0))) < 1e-8);
  CHECK(std::abs(r[1] - std::sin(6.0) / 3.0) < 1e-8);
}

TEST_CASE("adaptive simpson input validation and depth error") {
  auto c = scalar_fn(+[](double) { return 1.0; });
  CHECK_THROWS_AS(adaptive_simpson(c, 1.0, 0.0, 1e-8), ValidationError);
  CHECK_THROWS_AS(adaptive_simpson(c, 0.0, 1.0, 0.0), ValidationError);

  // |x-pi/7|^{0.1} has unbounded derivatives; an absurd tolerance exhausts depth
  auto rough = scalar_fn(+[](double x) { return std::pow(std::abs(x - 0.448798950), 0.1); });
  CHECK_THROWS_AS(adaptive_simpson(rough, 0.0, 1.0, 1e-15, 12), FitError);
}

TEST_CASE("fixed trapezoid hand values") {
  auto lin = scalar_fn(+[](double x) { return 3 * x + 1; });
  CHECK(fixed_trapezoid(lin, 0.0, 2.0, 2)[0] == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(fixed_trapezoid(lin, 0.0, 2.0, 57)[0] == doctest::Approx(8.0).epsilon(1e-13));

  auto sq = scalar_fn(+[](double x) { return x * x; });
  CHECK(fixed_trapezoid(sq, 0.0, 1.0, 2)[0] == doctest::Approx(0.5).epsilon(1e-14));

  CHECK_THROWS_AS(fixed_trapezoid(sq, 0.0, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(fixed_trapezoid_delta(sq, 0.0, 1.0, 0.0), ValidationError);
}

TEST_CASE("fixed trapezoid converges to the adaptive result") {
  auto f = scalar_fn(+[](double x) { return std::exp(-x) * std::sin(2 * x); });
  double adaptive = adaptive_simpson(f, 0.0, 3.0, 1e-10)[0];
  double fixed = fixed_trapezoid(f, 0.0, 3.0, 100000)[0];
  CHECK(std::abs(adaptive - fixed) < 1e-6);
}

TEST_CASE("fixed_trapezoid_delta picks a grid at least as fine as delta") {
  auto sq = scalar_fn(+[](double x) { return x * x; });
  double got = fixed_trapezoid_delta(sq, 0.0, 1.0, 1e-3)[0];
  CHECK(std::abs(got - 1.0 / 3.0) < 1e-6);
}
