#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sensiat/common.hpp"

namespace sensiat {

// Clamped B-spline basis on [knots.front(), knots.back()].
struct SplineBasisSpec {
  std::vector<double> knots;       // user-supplied, strictly increasing
  int degree = 3;
  std::vector<double> full_knots;  // with degree-fold endpoint replication

  int dimension() const {
    return static_cast<int>(knots.size()) - 2 + degree + 1;
  }
  double t1() const { return knots.front(); }
  double t2() const { return knots.back(); }
};

SplineBasisSpec make_basis(const std::vector<double>& knots, int degree);

Eigen::VectorXd evaluate_basis(const SplineBasisSpec& spec, double t);

// V = integral of B(t) B(t)' over [t1, t2], exact Gauss-Legendre per span.
Eigen::MatrixXd gram_matrix(const SplineBasisSpec& spec);

double mean_curve(const SplineBasisSpec& spec, const Eigen::VectorXd& beta, double t);

// Gauss-Legendre nodes/weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>* nodes, std::vector<double>* weights);

}  // namespace sensiat
