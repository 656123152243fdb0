#pragma once

#include "quifs/common.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <numbers>

namespace quifs::quadrature {

/// One-dimensional rule: nodes and weights.
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
  /// If true, the rule integrates f(x) e^{-x^2}; callers pass f = g e^{x^2}.
  bool gaussianWeight = false;
};

/// Gauss-Hermite rule for the weight e^{-x^2} (Golub-Welsch).
inline Rule gaussHermite(int n) {
  if (n < 1) throw InputError("gaussHermite: need at least one node");
  Matrix jacobi = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = std::sqrt(0.5 * k);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  Rule rule;
  rule.gaussianWeight = true;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Christoffel weights from the orthonormal recurrence: w_i = 1 / sum_k phi_k(x_i)^2.
  const double phi0 = std::pow(std::numbers::pi, -0.25);
  for (int i = 0; i < n; ++i) {
    const double x = eig.eigenvalues()[i];
    double prev = 0.0;
    double cur = phi0;
    double sum = cur * cur;
    for (int k = 0; k + 1 < n; ++k) {
      const double next = std::sqrt(2.0 / (k + 1)) * x * cur - std::sqrt(double(k) / (k + 1)) * prev;
      prev = cur;
      cur = next;
      sum += cur * cur;
    }
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / sum;
  }
  // Symmetrize to kill the last-bit asymmetry from the eigensolver; odd moments then vanish exactly.
  for (int i = 0, j = n - 1; i < j; ++i, --j) {
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Composite trapezoid rule on [-halfWidth, halfWidth]; spectrally accurate for
/// analytic integrands that decay at the ends.
inline Rule trapezoid(double halfWidth, int n) {
  if (n < 2 || !(halfWidth > 0.0)) throw InputError("trapezoid: bad rule size");
  Rule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double step = 2.0 * halfWidth / (n - 1);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = -halfWidth + step * i;
    rule.weights[i] = (i == 0 || i == n - 1) ? 0.5 * step : step;
  }
  // Mirror so that the grid is exactly symmetric.
  for (int i = 0, j = n - 1; i < j; ++i, --j) rule.nodes[i] = -rule.nodes[j];
  return rule;
}

/// Visits every node of the d-fold tensor rule; the callback receives the point
/// and the product weight (including e^{|x|^2} compensation when the rule is Gaussian-weighted).
inline void forEachTensorNode(const Rule& rule, int dim,
                              const std::function<void(std::span<const double>, double)>& visit) {
  const int n = static_cast<int>(rule.nodes.size());
  std::vector<int> idx(dim, 0);
  std::vector<double> point(dim);
  while (true) {
    double w = 1.0;
    double r2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      point[i] = rule.nodes[idx[i]];
      w *= rule.weights[idx[i]];
      r2 += point[i] * point[i];
    }
    if (rule.gaussianWeight) w *= std::exp(r2);
    visit(point, w);
    int axis = dim - 1;
    while (axis >= 0 && ++idx[axis] == n) {
      idx[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
}

}  // namespace quifs::quadrature
