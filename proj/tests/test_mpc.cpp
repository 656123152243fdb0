#include "support.hpp"

#include <gtest/gtest.h>

using namespace quifs;
using quifs::testing::box;
using quifs::testing::mat;
using quifs::testing::uniform;
using quifs::testing::vec;

namespace {

/// First-step gain of the unconstrained problem by stacking the whole horizon into one least-squares
/// system; independent of the backward recursion.
Matrix batchGain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P, int N) {
  const int d = static_cast<int>(A.rows()), m = static_cast<int>(B.cols());
  Matrix Phi = Matrix::Zero(N * d, d), Gam = Matrix::Zero(N * d, N * m);
  Matrix Ak = Matrix::Identity(d, d);
  for (int t = 0; t < N; ++t) {
    for (int k = 0; k <= t; ++k) {
      Matrix Apow = Matrix::Identity(d, d);
      for (int j = 0; j < t - k; ++j) Apow = A * Apow;
      Gam.block(t * d, k * m, d, m) = Apow * B;
    }
    Ak = A * Ak;
    Phi.block(t * d, 0, d, d) = Ak;
  }
  Matrix Qb = Matrix::Zero(N * d, N * d), Rb = Matrix::Zero(N * m, N * m);
  for (int t = 0; t < N; ++t) {
    Qb.block(t * d, t * d, d, d) = t + 1 < N ? Q : P;
    Rb.block(t * m, t * m, m, m) = R;
  }
  const Matrix H = Gam.transpose() * Qb * Gam + Rb;
  const Matrix U = -H.ldlt().solve(Gam.transpose() * Qb * Phi);  // U* = U x0
  return -U.topRows(m);
}

MpcProblem relaxed(MpcProblem p) {
  p.stateSet = Polytope::fromBox(box({-1e6, -1e6}, {1e6, 1e6}));
  p.controlSet = box({-1e6}, {1e6});
  return p;
}

/// Cost of a control sequence on the nominal dynamics, written out directly.
double rolloutCost(const MpcProblem& p, Vector x, const std::vector<double>& u) {
  double J = 0.0;
  for (double v : u) {
    const Vector uv = vec({v});
    J += x.dot(p.Q * x) + uv.dot(p.R * uv);
    x = p.nominal(x, uv);
  }
  return J + x.dot(p.P * x);
}

}  // namespace

TEST(Riccati, OneStepIdentity) {
  const Matrix I = Matrix::Identity(2, 2);
  const auto K = riccatiReference(I, I, I, I, I, 1);
  ASSERT_EQ(K.size(), 1u);
  EXPECT_LE((K[0] - 0.5 * I).norm(), 1e-15);
  EXPECT_TRUE(riccatiReference(I, I, I, I, I, 0).empty());
  EXPECT_THROW(riccatiReference(I, I, I, Matrix::Zero(2, 2), I, 1), InputError);
}

TEST(Riccati, MatchesBatchLeastSquares) {
  const MpcProblem p = quifs::testing::doubleIntegrator();
  const auto K = riccatiReference(p);
  ASSERT_EQ(K.size(), 15u);
  for (int t = 0; t < 15; ++t) {
    const Matrix Kb = batchGain(p.A, p.B, p.Q, p.R, p.P, 15 - t);
    EXPECT_LE((K[t] - Kb).cwiseAbs().maxCoeff(), 1e-9) << "t=" << t;
  }
}

TEST(Oracle, OriginIsEquilibrium) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  const OracleResult r = solveAtState(p, vec({0.0, 0.0}));
  ASSERT_TRUE(r.feasible());
  EXPECT_LE(r.firstControl.norm(), 1e-9);
  EXPECT_LE(r.value, 1e-12);
}

TEST(Oracle, UnconstrainedMatchesRiccati) {
  const MpcProblem p = relaxed(quifs::testing::doubleIntegrator());
  const Matrix K0 = riccatiReference(p)[0];
  MpcOracle oracle(p);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Vector x0 = vec({uniform(rng, -5, 5), uniform(rng, -1, 1)});
    const OracleResult r = oracle.solve(x0);
    ASSERT_TRUE(r.feasible());
    EXPECT_NEAR(r.firstControl[0], (-K0 * x0)[0], 1e-6);
  }
}

TEST(Oracle, InactiveConstraintsMatchRiccati) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  const auto K = riccatiReference(p);
  MpcOracle oracle(p);
  std::mt19937_64 rng(2);
  int checked = 0;
  for (int t = 0; t < 200 && checked < 20; ++t) {
    const Vector x0 = vec({uniform(rng, -2, 2), uniform(rng, -0.5, 0.5)});
    // Keep only states whose LQR rollout stays strictly inside the tightened constraints.
    Vector x = x0;
    bool inside = true;
    for (int s = 0; s < p.horizon && inside; ++s) {
      const double u = (-K[s] * x)[0];
      inside = std::abs(u) < 2.0 - 0.05 - 1e-3;
      x = p.nominal(x, vec({u}));
      if (s + 1 < p.horizon) {
        for (int i = 0; i < 4; ++i) inside = inside && p.stateSet.H.row(i).dot(x) < oracle.stateBound(s + 1, i) - 1e-3;
      }
    }
    if (!inside) continue;
    ++checked;
    const OracleResult r = oracle.solve(x0);
    ASSERT_TRUE(r.feasible());
    EXPECT_NEAR(r.firstControl[0], (-K[0] * x0)[0], 1e-6);
  }
  EXPECT_GE(checked, 10);
}

TEST(Oracle, OutsideStateSetIsInfeasible) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  MpcOracle oracle(p);
  EXPECT_EQ(oracle.solve(vec({7.0, 0.0})).status, OracleStatus::Infeasible);
  // Inside M but unable to brake before |x1| = 6.
  EXPECT_EQ(oracle.solve(vec({5.99, 1.0})).status, OracleStatus::Infeasible);
  EXPECT_THROW(oracle.solve(vec({0.0})), InputError);
}

TEST(Oracle, RobustToControlNoise) {
  // The planned sequence stays admissible when every control is perturbed within [-eps, eps].
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  MpcOracle oracle(p);
  std::mt19937_64 rng(3);
  int feasible = 0;
  for (int t = 0; t < 40; ++t) {
    const Vector x0 = vec({uniform(rng, -6, 6), uniform(rng, -1, 1)});
    const OracleResult r = oracle.solve(x0);
    if (!r.feasible()) continue;
    ++feasible;
    for (int trial = 0; trial < 20; ++trial) {
      Vector x = x0;
      for (int s = 0; s < p.horizon; ++s) {
        const double v = trial < 2 ? (trial == 0 ? 0.05 : -0.05) : uniform(rng, -0.05, 0.05);
        const double u = r.controls[s] + v;
        ASSERT_LE(std::abs(u), 2.0 + 1e-6);
        x = p.nominal(x, vec({u}));
        if (s + 1 < p.horizon) {
          ASSERT_TRUE(p.stateSet.contains(x, 1e-6)) << "x0=" << x0.transpose();
        }
      }
    }
  }
  EXPECT_GT(feasible, 10);
}

TEST(Oracle, NonlinearMatchesEnumeration) {
  // N = 3, controls discretized to 9 levels; 5 x 5 grid of initial states.
  for (const double umax : {5.0, 0.5}) {
    MpcProblem p = quifs::testing::cubicOscillator(3);
    p.controlSet = box({-umax}, {umax});
    MpcOracle oracle(p);
    const double step = 2.0 * umax / 8.0;
    for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
      for (double b : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        const Vector x0 = vec({a, b});
        double best = std::numeric_limits<double>::infinity();
        double bestU0 = 0.0;
        for (int i = 0; i < 9; ++i) {
          for (int j = 0; j < 9; ++j) {
            for (int k = 0; k < 9; ++k) {
              const double J = rolloutCost(p, x0, {-umax + i * step, -umax + j * step, -umax + k * step});
              if (J < best) {
                best = J;
                bestU0 = -umax + i * step;
              }
            }
          }
        }
        const OracleResult r = oracle.solve(x0);
        ASSERT_TRUE(r.feasible()) << x0.transpose();
        // The continuous optimum is never worse than the grid optimum, and its first control
        // lies within one grid cell of the grid minimizer.
        EXPECT_LE(r.value, best + 1e-9);
        EXPECT_NEAR(r.value, oracle.sequenceCost(x0, r.controls), 1e-9);
        EXPECT_LE(std::abs(r.firstControl[0] - bestU0), step + 1e-9) << x0.transpose();
      }
    }
  }
}

TEST(Oracle, EllipsoidTerminalSet) {
  MpcProblem p;
  p.dim = 2;
  p.controlDim = 1;
  p.horizon = 15;
  p.linear = false;
  p.rhs = {Expression("x2 + (0.5 + 0.5*x1)*u1", 2, 1), Expression("x1 + (0.5 - 2*x2)*u1", 2, 1)};
  p.integrator = Integrator::RK4;
  p.sampleTime = 0.1;
  p.Q = 0.01 * Matrix::Identity(2, 2);
  p.R = mat({{0.01}});
  p.P = mat({{19.6415, 13.1099}, {13.1099, 19.6415}});
  p.stateSet = Polytope::fromBox(box({-1, -1}, {1, 1}));
  p.controlSet = box({-1}, {1});
  p.terminal.kind = TerminalKind::Ellipsoid;
  p.terminal.P = p.P;
  p.disturbance = box({0, 0}, {0, 0});
  p.epsilon = 0.05;
  MpcOracle oracle(p);
  // (-0.7, -0.85) cannot reach the ellipsoid in 15 steps with |u| <= 1; this state can.
  const Vector x0 = vec({-0.3, -0.3});
  const OracleResult r = oracle.solve(x0);
  ASSERT_TRUE(r.feasible());
  EXPECT_EQ(oracle.solve(vec({-0.7, -0.85})).status, OracleStatus::Infeasible);
  Vector x = x0;
  for (int t = 0; t < p.horizon; ++t) {
    EXPECT_LE(std::abs(r.controls[t]), 1.0 - 0.05 + 1e-6);
    x = p.nominal(x, r.controls.segment(t, 1));
  }
  EXPECT_LE(x.dot(p.P * x), 1.0 + 1e-6);
}

TEST(Problem, ValidationErrors) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  EXPECT_NO_THROW(p.validate());
  MpcProblem bad = p;
  bad.R = mat({{0.0}});
  EXPECT_THROW(bad.validate(), InputError);
  bad = p;
  bad.stateSet = Polytope::fromBox(box({0, -1}, {6, 1}));
  EXPECT_THROW(bad.validate(), InputError);
  bad = p;
  bad.controlSet = box({0}, {2});
  EXPECT_THROW(bad.validate(), InputError);
  MpcProblem shifted = quifs::testing::cubicOscillator(3);
  shifted.rhs[1] = Expression("u1 + 1", 2, 1);
  EXPECT_THROW(shifted.validate(), InputError);
}

TEST(SampleNet, DoubleIntegratorGrid) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  const FeasibleNet net = sampleNet(p, 0.04, box({-6, -1}, {6, 1}));
  EXPECT_EQ(net.samples.box().extent(0), 301);
  EXPECT_EQ(net.samples.box().extent(1), 51);
  EXPECT_EQ(net.nonConvergedCount, 0);
  EXPECT_EQ(net.size() + net.infeasibleCount, 301 * 51);
  forEachIndex(net.samples.box(), [&](std::span<const Index> m) {
    const Vector x = net.samples.point(m);
    if (std::abs(x[0]) <= 5.0) {
      EXPECT_EQ(net.samples.flag(m), kFeasible) << x.transpose();
    }
  });
  EXPECT_EQ(net.samples.flag(std::vector<Index>{150, 25}), kAbsent);  // (6, 1) cannot stop in time
}

TEST(SampleNet, ThreadCountDoesNotMatter) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  p.epsilon = 0.05;
  OracleSettings one, three;
  three.threads = 3;
  const FeasibleNet a = sampleNet(p, 0.2, box({-6, -1}, {6, 1}), one);
  const FeasibleNet b = sampleNet(p, 0.2, box({-6, -1}, {6, 1}), three);
  EXPECT_EQ(a.samples.values(), b.samples.values());
  EXPECT_EQ(a.samples.flags(), b.samples.flags());
}

TEST(SampleNet, DegenerateBoxes) {
  MpcProblem p = quifs::testing::doubleIntegrator();
  const FeasibleNet empty = sampleNet(p, 0.04, box({0.01, 0.01}, {0.02, 0.02}));
  EXPECT_TRUE(empty.empty());
  const FeasibleNet column = sampleNet(p, 5.0, box({-0.5, -1}, {0.5, 1}));
  EXPECT_EQ(column.samples.box().extent(0), 1);
  EXPECT_EQ(column.size(), 1);
}
