#include <random>

#include "doctest.h"
#include "sensiat/spline.hpp"

using namespace sensiat;

TEST_CASE("partition of unity over the whole range") {
  SplineBasisSpec spec = make_basis({76.0, 654.0, 1232.0}, 3);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(spec.t1(), spec.t2());
  for (int i = 0; i < 500; ++i) {
    double t = u(rng);
    CHECK(evaluate_basis(spec, t).sum() == doctest::Approx(1.0).epsilon(1e-13));
  }
  CHECK(evaluate_basis(spec, spec.t1()).sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(evaluate_basis(spec, spec.t2()).sum() == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("basis dimension and range checks") {
  SplineBasisSpec spec = make_basis({0.0, 1.0, 2.0, 3.0}, 3);
  CHECK(spec.dimension() == 6);
  CHECK(evaluate_basis(spec, 1.5).size() == 6);
  CHECK_THROWS_AS(evaluate_basis(spec, -0.1), ValidationError);
  CHECK_THROWS_AS(evaluate_basis(spec, 3.1), ValidationError);
  CHECK_THROWS_AS(make_basis({1.0, 1.0}, 3), ValidationError);
  CHECK_THROWS_AS(make_basis({1.0}, 3), ValidationError);
}

TEST_CASE("gram matrix is symmetric positive definite with 1'V1 = length") {
  for (int degree : {1, 2, 3}) {
    SplineBasisSpec spec = make_basis({76.0, 654.0, 1232.0}, degree);
    Eigen::MatrixXd V = gram_matrix(spec);
    CHECK((V - V.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    CHECK(llt.info() == Eigen::Success);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(V.rows());
    CHECK(ones.dot(V * ones) == doctest::Approx(1232.0 - 76.0).epsilon(1e-12));
  }
}

TEST_CASE("hat-function gram matrix equals [[1/3,1/6],[1/6,1/3]]") {
  SplineBasisSpec spec = make_basis({0.0, 1.0}, 1);
  REQUIRE(spec.dimension() == 2);
  Eigen::MatrixXd V = gram_matrix(spec);
  CHECK(V(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(V(0, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(V(1, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(V(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("spline curve is continuous at interior knots") {
  SplineBasisSpec spec = make_basis({0.0, 40.0, 100.0}, 3);
  Eigen::VectorXd beta(spec.dimension());
  for (int i = 0; i < beta.size(); ++i) beta[i] = std::sin(1.0 + i);
  double eps = 1e-9;
  double below = mean_curve(spec, beta, 40.0 - eps);
  double above = mean_curve(spec, beta, 40.0 + eps);
  CHECK(std::abs(below - above) < 1e-7);
  CHECK(mean_curve(spec, beta, 40.0) == doctest::Approx(below).epsilon(1e-7));
}

TEST_CASE("gauss-legendre nodes integrate polynomials exactly") {
  std::vector<double> nodes, weights;
  gauss_legendre(4, &nodes, &weights);
  REQUIRE(nodes.size() == 4);
  // exact for degree <= 7 on [-1,1]
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double x = nodes[i];
    acc += weights[i] * (5 * x * x * x * x * x * x - 3 * x * x + 1);
  }
  CHECK(acc == doctest::Approx(5.0 * 2 / 7 - 3.0 * 2 / 3 + 2).epsilon(1e-13));
}

TEST_CASE("constant function reproduced exactly by all-ones coefficients") {
  SplineBasisSpec spec = make_basis({10.0, 50.0, 90.0}, 3);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(spec.dimension());
  for (double t : {10.0, 17.3, 50.0, 63.9, 90.0}) {
    CHECK(mean_curve(spec, ones, t) == doctest::Approx(1.0).epsilon(1e-13));
  }
}
