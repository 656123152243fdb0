#pragma once

#include "quifs/quifs.hpp"

#include <random>

namespace quifs::testing {

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  int i = 0;
  for (const auto& r : rows) {
    int j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(v.size());
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline Box box(std::initializer_list<double> lo, std::initializer_list<double> hi) { return Box{vec(lo), vec(hi)}; }

/// x+ = [[1, .1], [0, 1]] x + [.005; .1] u, |x1| <= 6, |x2| <= 1, |u| <= 2, N = 15.
inline MpcProblem doubleIntegrator(int N = 15) {
  MpcProblem p = MpcProblem::makeLinear(mat({{1.0, 0.1}, {0.0, 1.0}}), mat({{0.005}, {0.1}}), Matrix::Identity(2, 2),
                                        mat({{1.0}}), Matrix(), N);
  p.stateSet = Polytope::fromBox(box({-6, -1}, {6, 1}));
  p.controlSet = box({-2}, {2});
  return p;
}

/// x+ = 1.2 x + u, |x| <= 2, |u| <= 1, N = 5.
inline MpcProblem scalarProblem() {
  MpcProblem p = MpcProblem::makeLinear(mat({{1.2}}), mat({{1.0}}), mat({{1.0}}), mat({{0.1}}), Matrix(), 5);
  p.stateSet = Polytope::fromBox(box({-2}, {2}));
  p.controlSet = box({-1}, {1});
  return p;
}

/// Forward-Euler cubic oscillator, Ts = 0.05.
inline MpcProblem cubicOscillator(int N) {
  MpcProblem p;
  p.dim = 2;
  p.controlDim = 1;
  p.horizon = N;
  p.linear = false;
  p.rhs = {Expression("x2", 2, 1), Expression("u1 - 0.6*x2 - x1^3 - x1", 2, 1)};
  p.integrator = Integrator::ForwardEuler;
  p.sampleTime = 0.05;
  p.Q = Matrix::Identity(2, 2);
  p.R = mat({{0.5}});
  p.P = Matrix::Zero(2, 2);
  p.stateSet = Polytope::fromBox(box({-5, -5}, {5, 5}));
  p.controlSet = box({-5}, {5});
  p.disturbance = box({0, 0}, {0, 0});
  return p;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace quifs::testing
