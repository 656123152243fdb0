#pragma once

#include "quifs/common.hpp"
#include "quifs/expression.hpp"
#include "quifs/extend.hpp"
#include "quifs/lattice.hpp"
#include "quifs/qp.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <vector>

namespace quifs {

/// {x : H x <= g}.
struct Polytope {
  Matrix H;
  Vector g;

  int dim() const { return static_cast<int>(H.cols()); }
  int rows() const { return static_cast<int>(H.rows()); }
  bool contains(const Vector& x, double tol = 0.0) const {
    return ((H * x - g).array() <= tol).all();
  }
  /// Every row strictly satisfied at the origin.
  bool originInterior() const { return (g.array() > 0.0).all(); }

  static Polytope fromBox(const Box& b) {
    const int d = b.dim();
    Polytope p;
    p.H = Matrix::Zero(2 * d, d);
    p.g = Vector::Zero(2 * d);
    for (int i = 0; i < d; ++i) {
      p.H(2 * i, i) = 1.0;
      p.g[2 * i] = b.upper[i];
      p.H(2 * i + 1, i) = -1.0;
      p.g[2 * i + 1] = -b.lower[i];
    }
    return p;
  }
};

enum class TerminalKind { None, Polytope, Ellipsoid };

struct TerminalSet {
  TerminalKind kind = TerminalKind::None;
  Polytope polytope;
  Matrix P;  // ellipsoid {x : x'Px <= 1}

  bool contains(const Vector& x, double tol = 0.0) const {
    switch (kind) {
      case TerminalKind::None: return true;
      case TerminalKind::Polytope: return polytope.contains(x, tol);
      case TerminalKind::Ellipsoid: return x.dot(P * x) <= 1.0 + tol;
    }
    return true;
  }
};

enum class Integrator { Discrete, ForwardEuler, RK4 };

/// x+ = f(x, u + v) + w with f either A x + B u or an integrated vector field.
class MpcProblem {
 public:
  int dim = 0;
  int controlDim = 0;
  int horizon = 1;
  bool linear = true;
  Matrix A, B;
  std::vector<Expression> rhs;  // continuous vector field (or the map itself when Discrete)
  Integrator integrator = Integrator::Discrete;
  double sampleTime = 1.0;
  Matrix Q, R, P;
  Polytope stateSet;
  Box controlSet;
  TerminalSet terminal;
  Box disturbance;       // W, additive
  double epsilon = 0.0;  // V = [-eps, eps]^m

  static MpcProblem makeLinear(Matrix A, Matrix B, Matrix Q, Matrix R, Matrix P, int N) {
    MpcProblem p;
    p.dim = static_cast<int>(A.rows());
    p.controlDim = static_cast<int>(B.cols());
    p.horizon = N;
    p.linear = true;
    p.A = std::move(A);
    p.B = std::move(B);
    p.Q = std::move(Q);
    p.R = std::move(R);
    p.P = P.size() == 0 ? Matrix::Zero(p.dim, p.dim) : std::move(P);
    p.disturbance = Box{Vector::Zero(p.dim), Vector::Zero(p.dim)};
    return p;
  }

  /// Nominal successor f(x, u) (no disturbance).
  Vector nominal(const Vector& x, const Vector& u) const {
    if (linear) return A * x + B * u;
    switch (integrator) {
      case Integrator::Discrete: return field(x, u);
      case Integrator::ForwardEuler: return x + sampleTime * field(x, u);
      case Integrator::RK4: {
        const double h = sampleTime;
        const Vector k1 = field(x, u);
        const Vector k2 = field(x + 0.5 * h * k1, u);
        const Vector k3 = field(x + 0.5 * h * k2, u);
        const Vector k4 = field(x + h * k3, u);
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
    }
    return x;
  }

  /// True successor f(x, u + v) + w.
  Vector step(const Vector& x, const Vector& u, const Vector& w) const { return nominal(x, u) + w; }

  Vector field(const Vector& x, const Vector& u) const {
    Vector out(dim);
    for (int i = 0; i < dim; ++i) out[i] = rhs[i](x.data(), u.data());
    return out;
  }

  /// Central-difference Jacobians of the nominal map.
  void jacobians(const Vector& x, const Vector& u, Matrix& Ax, Matrix& Bu, double step = 1e-6) const {
    if (linear) {
      Ax = A;
      Bu = B;
      return;
    }
    Ax.resize(dim, dim);
    Bu.resize(dim, controlDim);
    Vector xp = x, up = u;
    for (int j = 0; j < dim; ++j) {
      xp[j] = x[j] + step;
      const Vector fp = nominal(xp, u);
      xp[j] = x[j] - step;
      const Vector fm = nominal(xp, u);
      xp[j] = x[j];
      Ax.col(j) = (fp - fm) / (2.0 * step);
    }
    for (int j = 0; j < controlDim; ++j) {
      up[j] = u[j] + step;
      const Vector fp = nominal(x, up);
      up[j] = u[j] - step;
      const Vector fm = nominal(x, up);
      up[j] = u[j];
      Bu.col(j) = (fp - fm) / (2.0 * step);
    }
  }

  double stageCost(const Vector& x, const Vector& u) const { return x.dot(Q * x) + u.dot(R * u); }

  /// Control box shrunk by eps on every side (U minus V).
  Box tightenedControls() const {
    return Box{controlSet.lower.array() + epsilon, controlSet.upper.array() - epsilon};
  }

  /// Throws InputError describing the first inconsistency.
  void validate() const {
    auto fail = [](const std::string& what) { throw InputError("problem: " + what); };
    if (dim < 1 || controlDim < 1) fail("dimensions must be positive");
    if (horizon < 1) fail("horizon must be >= 1");
    if (linear) {
      if (A.rows() != dim || A.cols() != dim) fail("A must be d x d");
      if (B.rows() != dim || B.cols() != controlDim) fail("B must be d x m");
    } else {
      if (static_cast<int>(rhs.size()) != dim) fail("nonlinear dynamics need one expression per state");
      if (integrator != Integrator::Discrete && !(sampleTime > 0.0)) fail("sample time must be positive");
    }
    if (Q.rows() != dim || Q.cols() != dim) fail("Q must be d x d");
    if (R.rows() != controlDim || R.cols() != controlDim) fail("R must be m x m");
    if (P.rows() != dim || P.cols() != dim) fail("P must be d x d");
    Eigen::LLT<Matrix> llt(R);
    if (llt.info() != Eigen::Success) fail("R must be positive definite");
    for (const Matrix* M : {&Q, &P}) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(*M);
      if (es.eigenvalues().minCoeff() < -1e-12) fail("Q and P must be positive semidefinite");
    }
    if (stateSet.dim() != dim || stateSet.g.size() != stateSet.rows()) fail("state set dimension mismatch");
    if (!stateSet.originInterior()) fail("state set must contain the origin in its interior");
    if (controlSet.dim() != controlDim) fail("control set dimension mismatch");
    if (!((controlSet.lower.array() < 0.0).all() && (controlSet.upper.array() > 0.0).all())) {
      fail("control set must contain the origin in its interior");
    }
    if (terminal.kind == TerminalKind::Polytope) {
      if (terminal.polytope.dim() != dim) fail("terminal set dimension mismatch");
      if (!terminal.polytope.originInterior()) fail("terminal set must contain the origin in its interior");
    }
    if (terminal.kind == TerminalKind::Ellipsoid) {
      if (terminal.P.rows() != dim || terminal.P.cols() != dim) fail("terminal ellipsoid must be d x d");
      Eigen::LLT<Matrix> e(terminal.P);
      if (e.info() != Eigen::Success) fail("terminal ellipsoid matrix must be positive definite");
    }
    if (disturbance.dim() != dim) fail("disturbance set dimension mismatch");
    if ((disturbance.lower.array() > 0.0).any() || (disturbance.upper.array() < 0.0).any()) {
      fail("disturbance set must contain the origin");
    }
    for (int i = 0; i < dim; ++i) {
      const bool zero = disturbance.lower[i] == 0.0 && disturbance.upper[i] == 0.0;
      if (!zero && !(disturbance.lower[i] < 0.0 && disturbance.upper[i] > 0.0)) {
        fail("a nonzero disturbance set must contain the origin in its interior");
      }
    }
    if (epsilon < 0.0) fail("epsilon must be >= 0");
    const Vector f0 = nominal(Vector::Zero(dim), Vector::Zero(controlDim));
    if (f0.lpNorm<Eigen::Infinity>() > 1e-9) fail("the origin must be an equilibrium: f(0,0,0) = 0");
  }
};

/// Finite-horizon Riccati gains K_0..K_{N-1} (u_t = -K_t x_t) for x+ = A x + B u,
/// stage cost x'Qx + u'Ru and terminal cost x'Px.
inline std::vector<Matrix> riccatiReference(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                            const Matrix& P, int N) {
  if (N < 0) throw InputError("riccati: negative horizon");
  Eigen::LLT<Matrix> rc(R);
  if (rc.info() != Eigen::Success) throw InputError("riccati: R must be positive definite");
  std::vector<Matrix> gains(N);
  Matrix Pt = P;
  for (int t = N - 1; t >= 0; --t) {
    const Matrix S = R + B.transpose() * Pt * B;
    gains[t] = S.ldlt().solve(B.transpose() * Pt * A);
    const Matrix next = Q + A.transpose() * Pt * (A - B * gains[t]);
    Pt = 0.5 * (next + next.transpose());
  }
  return gains;
}

inline std::vector<Matrix> riccatiReference(const MpcProblem& p) {
  if (!p.linear) throw InputError("riccati: problem is not linear");
  return riccatiReference(p.A, p.B, p.Q, p.R, p.P, p.horizon);
}

enum class OracleStatus { Feasible, Infeasible, NonConverged };

inline const char* toString(OracleStatus s) {
  switch (s) {
    case OracleStatus::Feasible: return "feasible";
    case OracleStatus::Infeasible: return "infeasible";
    case OracleStatus::NonConverged: return "nonconverged";
  }
  return "?";
}

struct SolverStats {
  int iterations = 0;
  double primalResidual = 0.0;
  double dualResidual = 0.0;
  int starts = 0;
  bool polished = false;
};

struct OracleResult {
  OracleStatus status = OracleStatus::Infeasible;
  Vector firstControl;
  double value = std::numeric_limits<double>::infinity();
  Vector controls;  // stacked u_0..u_{N-1}
  Vector duals;     // QP multipliers (linear path), reused as a warm start
  SolverStats stats;

  bool feasible() const { return status == OracleStatus::Feasible; }
};

struct OracleSettings {
  QpSettings qp;
  int randomStarts = 1;  // on top of the zero and LQR starts
  std::uint64_t seed = 20240917;
  double feasibilityTol = 1e-6;
  int maxSqpIterations = 150;
  double sqpTolerance = 1e-7;  // relative step; finite-difference Jacobians floor the step near 1e-8
  int threads = 1;
};

/// Pointwise solver for the approximation-ready problem. Linear problems with box/polytope sets use a
/// condensed QP whose matrices are built once; everything else goes through single-shooting SQP.
/// Not thread-safe (keeps factorizations); use one oracle per thread.
class MpcOracle {
 public:
  explicit MpcOracle(const MpcProblem& p, OracleSettings settings = {}) : p_(p), settings_(settings) {
    p_.validate();
    const Box uc = p_.tightenedControls();
    controlsEmpty_ = (uc.lower.array() > uc.upper.array()).any();
    buildMargins();
    if (p_.linear && p_.terminal.kind != TerminalKind::Ellipsoid) buildCondensed();
  }

  const MpcProblem& problem() const { return p_; }
  const OracleSettings& settings() const { return settings_; }

  /// Tightened right-hand side of state row i at step t (1 <= t <= N-1).
  double stateBound(int t, int row) const { return p_.stateSet.g[row] - stateMargin_(t, row); }

  OracleResult solve(const Vector& x0, const OracleResult* warm = nullptr) {
    if (x0.size() != p_.dim) throw InputError("solveAtState: state dimension mismatch");
    requireFinite(x0, "solveAtState");
    OracleResult r;
    r.firstControl = Vector::Zero(p_.controlDim);
    if (controlsEmpty_ || !p_.stateSet.contains(x0, 0.0)) return r;
    if (p_.linear && p_.terminal.kind != TerminalKind::Ellipsoid) return solveLinear(x0, warm);
    return solveNonlinear(x0, warm);
  }

  /// Cost of a control sequence from x0 along the nominal dynamics.
  double sequenceCost(const Vector& x0, const Vector& U) const {
    double J = 0.0;
    Vector x = x0;
    const int m = p_.controlDim;
    for (int t = 0; t < p_.horizon; ++t) {
      const Vector u = U.segment(t * m, m);
      J += p_.stageCost(x, u);
      x = p_.nominal(x, u);
    }
    return J + x.dot(p_.P * x);
  }

  /// Total violation of the tightened state/terminal constraints along the nominal rollout.
  double sequenceViolation(const Vector& x0, const Vector& U) const {
    std::vector<Vector> X;
    rollout(x0, U, X);
    return violation(X);
  }

 private:
  // ----- robust margins -------------------------------------------------------------------
  void buildMargins() {
    const int N = p_.horizon;
    const int d = p_.dim;
    Matrix A0, B0;
    p_.jacobians(Vector::Zero(d), Vector::Zero(p_.controlDim), A0, B0);
    const Vector wHalf = 0.5 * (p_.disturbance.upper - p_.disturbance.lower);
    const Vector wMid = 0.5 * (p_.disturbance.upper + p_.disturbance.lower);
    // Support of the accumulated offset sum_k A^{t-1-k}(B v_k + w_k) in direction c.
    std::vector<Matrix> powers(N + 1);
    powers[0] = Matrix::Identity(d, d);
    for (int k = 1; k <= N; ++k) powers[k] = A0 * powers[k - 1];
    auto support = [&](const Vector& c, int t) {
      double s = 0.0;
      for (int k = 0; k < t; ++k) {
        const Vector a = powers[t - 1 - k].transpose() * c;
        s += p_.epsilon * (B0.transpose() * a).lpNorm<1>();
        s += a.dot(wMid) + a.cwiseAbs().dot(wHalf);
      }
      return s;
    };
    const Polytope& M = p_.stateSet;
    stateMargin_ = Matrix::Zero(N + 1, M.rows());
    for (int t = 1; t <= N; ++t) {
      for (int i = 0; i < M.rows(); ++i) stateMargin_(t, i) = support(M.H.row(i).transpose(), t);
    }
    if (p_.terminal.kind == TerminalKind::Polytope) {
      const Polytope& F = p_.terminal.polytope;
      terminalBound_ = F.g;
      for (int i = 0; i < F.rows(); ++i) terminalBound_[i] -= support(F.H.row(i).transpose(), N);
    }
    if (p_.terminal.kind == TerminalKind::Ellipsoid) {
      // x'Px <= 1 for the true state holds if the nominal state satisfies |P^{1/2} x| <= 1 - r.
      Eigen::SelfAdjointEigenSolver<Matrix> es(p_.terminal.P);
      const Matrix half = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
      const double wNorm = (wHalf.cwiseAbs() + wMid.cwiseAbs()).norm();
      double r = 0.0;
      for (int k = 0; k < N; ++k) {
        const Matrix T = half * powers[N - 1 - k];
        r += (T * B0).operatorNorm() * p_.epsilon * std::sqrt(double(p_.controlDim)) + T.operatorNorm() * wNorm;
      }
      ellipsoidLevel_ = r < 1.0 ? (1.0 - r) * (1.0 - r) : -1.0;
    }
  }

  // ----- linear condensed QP -------------------------------------------------------------
  void buildCondensed() {
    const int N = p_.horizon, d = p_.dim, m = p_.controlDim, n = N * m;
    Phi_ = Matrix::Zero(N * d, d);
    Gamma_ = Matrix::Zero(N * d, n);
    Matrix Ak = Matrix::Identity(d, d);
    for (int t = 1; t <= N; ++t) {
      Ak = p_.A * Ak;
      Phi_.block((t - 1) * d, 0, d, d) = Ak;
      for (int k = 0; k < t; ++k) {
        Matrix Apow = Matrix::Identity(d, d);
        for (int j = 0; j < t - 1 - k; ++j) Apow = p_.A * Apow;
        Gamma_.block((t - 1) * d, k * m, d, m) = Apow * p_.B;
      }
    }
    Matrix Qbar = Matrix::Zero(N * d, N * d);
    for (int t = 1; t < N; ++t) Qbar.block((t - 1) * d, (t - 1) * d, d, d) = p_.Q;
    Qbar.block((N - 1) * d, (N - 1) * d, d, d) = p_.P;
    Matrix Rbar = Matrix::Zero(n, n);
    for (int t = 0; t < N; ++t) Rbar.block(t * m, t * m, m, m) = p_.R;
    Matrix H = 2.0 * (Gamma_.transpose() * Qbar * Gamma_ + Rbar);
    H = 0.5 * (H + H.transpose());
    F_ = 2.0 * Gamma_.transpose() * Qbar * Phi_;
    W_ = p_.Q + Phi_.transpose() * Qbar * Phi_;

    // Rows: controls, state rows for t = 1..N-1, terminal rows at N.
    const Polytope& M = p_.stateSet;
    const int ns = M.rows();
    const int nt = p_.terminal.kind == TerminalKind::Polytope ? p_.terminal.polytope.rows() : 0;
    const int rows = n + ns * (N - 1) + nt;
    Matrix C = Matrix::Zero(rows, n);
    C.topLeftCorner(n, n) = Matrix::Identity(n, n);
    stateRowsX0_ = Matrix::Zero(rows, d);
    stateRowsRhs_ = Vector::Constant(rows, std::numeric_limits<double>::infinity());
    int r = n;
    for (int t = 1; t < N; ++t) {
      for (int i = 0; i < ns; ++i, ++r) {
        C.row(r) = M.H.row(i) * Gamma_.middleRows((t - 1) * d, d);
        stateRowsX0_.row(r) = M.H.row(i) * Phi_.middleRows((t - 1) * d, d);
        stateRowsRhs_[r] = stateBound(t, i);
      }
    }
    for (int i = 0; i < nt; ++i, ++r) {
      const Polytope& T = p_.terminal.polytope;
      C.row(r) = T.H.row(i) * Gamma_.middleRows((N - 1) * d, d);
      stateRowsX0_.row(r) = T.H.row(i) * Phi_.middleRows((N - 1) * d, d);
      stateRowsRhs_[r] = terminalBound_[i];
    }
    const Box uc = p_.tightenedControls();
    lower_ = Vector::Constant(rows, -std::numeric_limits<double>::infinity());
    upper0_ = stateRowsRhs_;
    for (int t = 0; t < N; ++t) {
      lower_.segment(t * m, m) = uc.lower;
      upper0_.segment(t * m, m) = uc.upper;
    }
    // Smallest value each state row can take over the control box, for a quick infeasibility test.
    rowMin_ = Vector::Zero(rows);
    for (int i = n; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        const double c = C(i, j);
        s += std::min(c * lower_[j], c * upper0_[j]);
      }
      rowMin_[i] = s;
    }
    qp_.setup(H, C, settings_.qp);
  }

  OracleResult solveLinear(const Vector& x0, const OracleResult* warm) {
    OracleResult r;
    r.firstControl = Vector::Zero(p_.controlDim);
    const int n = p_.horizon * p_.controlDim;
    Vector upper = upper0_;
    for (int i = n; i < upper.size(); ++i) {
      upper[i] = stateRowsRhs_[i] - stateRowsX0_.row(i).dot(x0);
      if (rowMin_[i] > upper[i] + settings_.feasibilityTol) return r;
    }
    const Vector q = F_ * x0;
    const Vector* wx = warm && warm->controls.size() == n ? &warm->controls : nullptr;
    const Vector* wy = warm && warm->duals.size() == upper.size() ? &warm->duals : nullptr;
    const QpResult res = qp_.solve(q, lower_, upper, wx, wy);
    r.stats.iterations = res.iterations;
    r.stats.primalResidual = res.primalResidual;
    r.stats.dualResidual = res.dualResidual;
    r.stats.polished = res.polished;
    r.stats.starts = 1;
    if (res.status == QpStatus::PrimalInfeasible) return r;
    if (res.status == QpStatus::MaxIterations) {
      r.status = OracleStatus::NonConverged;
      return r;
    }
    const Vector cx = qp_.C() * res.x;
    if (((cx - upper).array() > settings_.feasibilityTol).any() ||
        ((lower_ - cx).array() > settings_.feasibilityTol).any()) {
      return r;
    }
    r.status = OracleStatus::Feasible;
    r.controls = res.x;
    clipControls(r.controls);
    r.duals = res.y;
    r.firstControl = r.controls.head(p_.controlDim);
    r.value = 0.5 * r.controls.dot(qp_.P() * r.controls) + q.dot(r.controls) + x0.dot(W_ * x0);
    r.value = std::max(r.value, 0.0);
    return r;
  }

  void clipControls(Vector& U) const {
    const Box uc = p_.tightenedControls();
    const int m = p_.controlDim;
    for (int t = 0; t < p_.horizon; ++t) {
      for (int j = 0; j < m; ++j) U[t * m + j] = std::clamp(U[t * m + j], uc.lower[j], uc.upper[j]);
    }
  }

  // ----- nonlinear single shooting ---------------------------------------------------------
  void rollout(const Vector& x0, const Vector& U, std::vector<Vector>& X) const {
    const int N = p_.horizon, m = p_.controlDim;
    X.resize(N + 1);
    X[0] = x0;
    for (int t = 0; t < N; ++t) X[t + 1] = p_.nominal(X[t], U.segment(t * m, m));
  }

  double cost(const std::vector<Vector>& X, const Vector& U) const {
    const int N = p_.horizon, m = p_.controlDim;
    double J = 0.0;
    for (int t = 0; t < N; ++t) J += p_.stageCost(X[t], U.segment(t * m, m));
    return J + X[N].dot(p_.P * X[N]);
  }

  double violation(const std::vector<Vector>& X) const {
    const int N = p_.horizon;
    double v = 0.0;
    const Polytope& M = p_.stateSet;
    for (int t = 1; t < N; ++t) {
      if (!X[t].allFinite()) return std::numeric_limits<double>::infinity();
      const Vector hx = M.H * X[t];
      for (int i = 0; i < M.rows(); ++i) v += std::max(0.0, hx[i] - stateBound(t, i));
    }
    if (!X[N].allFinite()) return std::numeric_limits<double>::infinity();
    if (p_.terminal.kind == TerminalKind::Polytope) {
      const Vector hx = p_.terminal.polytope.H * X[N];
      for (int i = 0; i < hx.size(); ++i) v += std::max(0.0, hx[i] - terminalBound_[i]);
    } else if (p_.terminal.kind == TerminalKind::Ellipsoid) {
      v += std::max(0.0, X[N].dot(p_.terminal.P * X[N]) - ellipsoidLevel_);
    }
    return v;
  }

  struct StartResult {
    bool converged = false;
    bool feasible = false;
    double value = std::numeric_limits<double>::infinity();
    Vector U;
    int iterations = 0;
  };

  StartResult runSqp(const Vector& x0, Vector U) const {
    const int N = p_.horizon, d = p_.dim, m = p_.controlDim, n = N * m;
    const Polytope& M = p_.stateSet;
    const int ns = M.rows();
    const int nt = p_.terminal.kind == TerminalKind::Polytope    ? p_.terminal.polytope.rows()
                   : p_.terminal.kind == TerminalKind::Ellipsoid ? 1
                                                                 : 0;
    const int nc = ns * (N - 1) + nt;
    const Box uc = p_.tightenedControls();
    clipControls(U);
    StartResult out;
    std::vector<Vector> X, Xtrial;
    std::vector<Matrix> As(N), Bs(N), S(N + 1);
    double mu = 10.0;
    Vector yPrev;
    rollout(x0, U, X);
    double J = cost(X, U);
    double viol = violation(X);
    for (int it = 0; it < settings_.maxSqpIterations; ++it) {
      out.iterations = it + 1;
      for (int t = 0; t < N; ++t) p_.jacobians(X[t], U.segment(t * m, m), As[t], Bs[t]);
      S[0] = Matrix::Zero(d, n);
      for (int t = 0; t < N; ++t) {
        S[t + 1] = As[t] * S[t];
        S[t + 1].middleCols(t * m, m) += Bs[t];
      }
      Matrix H = Matrix::Zero(n, n);
      Vector g = Vector::Zero(n);
      for (int t = 0; t < N; ++t) {
        H.block(t * m, t * m, m, m) += 2.0 * p_.R;
        g.segment(t * m, m) += 2.0 * p_.R * U.segment(t * m, m);
      }
      for (int t = 1; t <= N; ++t) {
        const Matrix& W = t < N ? p_.Q : p_.P;
        H += 2.0 * S[t].transpose() * W * S[t];
        g += 2.0 * S[t].transpose() * (W * X[t]);
      }
      H = 0.5 * (H + H.transpose());
      Matrix C(n + nc, n);
      Vector lo(n + nc), up(n + nc);
      C.topRows(n) = Matrix::Identity(n, n);
      for (int t = 0; t < N; ++t) {
        lo.segment(t * m, m) = uc.lower - U.segment(t * m, m);
        up.segment(t * m, m) = uc.upper - U.segment(t * m, m);
      }
      int r = n;
      for (int t = 1; t < N; ++t) {
        const Vector hx = M.H * X[t];
        for (int i = 0; i < ns; ++i, ++r) {
          C.row(r) = M.H.row(i) * S[t];
          lo[r] = -std::numeric_limits<double>::infinity();
          up[r] = stateBound(t, i) - hx[i];
        }
      }
      if (p_.terminal.kind == TerminalKind::Polytope) {
        const Vector hx = p_.terminal.polytope.H * X[N];
        for (int i = 0; i < nt; ++i, ++r) {
          C.row(r) = p_.terminal.polytope.H.row(i) * S[N];
          lo[r] = -std::numeric_limits<double>::infinity();
          up[r] = terminalBound_[i] - hx[i];
        }
      } else if (p_.terminal.kind == TerminalKind::Ellipsoid) {
        C.row(r) = 2.0 * (p_.terminal.P * X[N]).transpose() * S[N];
        lo[r] = -std::numeric_limits<double>::infinity();
        up[r] = ellipsoidLevel_ - X[N].dot(p_.terminal.P * X[N]);
        ++r;
      }
      Vector delta;
      Vector y;
      double slack = 0.0;
      {
        DenseQpSolver qp(H + 1e-10 * Matrix::Identity(n, n), C, settings_.qp);
        const QpResult res = qp.solve(g, lo, up, nullptr, yPrev.size() == n + nc ? &yPrev : nullptr);
        if (res.status == QpStatus::Solved) {
          delta = res.x;
          y = res.y;
        }
      }
      if (delta.size() == 0) {
        // Linearization infeasible: relax the state rows by one shared slack s >= 0 with a large linear price.
        Matrix Hs = Matrix::Zero(n + 1, n + 1);
        Hs.topLeftCorner(n, n) = H + 1e-10 * Matrix::Identity(n, n);
        Hs(n, n) = 1e-6;
        Vector gs(n + 1);
        gs.head(n) = g;
        gs[n] = 1e4;
        Matrix Cs = Matrix::Zero(n + nc + 1, n + 1);
        Cs.topLeftCorner(n + nc, n) = C;
        for (int i = n; i < n + nc; ++i) Cs(i, n) = -1.0;
        Cs(n + nc, n) = 1.0;
        Vector los(n + nc + 1), ups(n + nc + 1);
        los.head(n + nc) = lo;
        ups.head(n + nc) = up;
        los[n + nc] = 0.0;
        ups[n + nc] = std::numeric_limits<double>::infinity();
        DenseQpSolver qp(Hs, Cs, settings_.qp);
        const QpResult res = qp.solve(gs, los, ups);
        if (res.status != QpStatus::Solved) break;
        delta = res.x.head(n);
        slack = res.x[n];
        y = res.y.head(n + nc);
      }
      yPrev = y;
      if (y.size() > n) mu = std::max(mu, 2.0 * y.tail(nc).cwiseAbs().maxCoeff() + 1.0);
      const double step = delta.lpNorm<Eigen::Infinity>();
      if (step <= settings_.sqpTolerance * std::max(1.0, U.lpNorm<Eigen::Infinity>())) {
        out.converged = true;
        break;
      }
      // Backtracking on the l1 merit J + mu * violation.
      const double merit = J + mu * viol;
      const double slope = g.dot(delta) - mu * std::max(0.0, viol - slack * nc);
      double alpha = 1.0;
      bool accepted = false;
      Vector Utrial;
      double Jt = 0.0, vt = 0.0;
      for (int ls = 0; ls < 40; ++ls) {
        Utrial = U + alpha * delta;
        rollout(x0, Utrial, Xtrial);
        Jt = cost(Xtrial, Utrial);
        vt = violation(Xtrial);
        if (std::isfinite(Jt) && std::isfinite(vt) &&
            Jt + mu * vt <= merit + 1e-4 * alpha * std::min(slope, 0.0) + 1e-14 * std::abs(merit)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        out.converged = step < 1e-6;
        break;
      }
      U = Utrial;
      X = Xtrial;
      J = Jt;
      viol = vt;
      if (alpha * step <= settings_.sqpTolerance) {
        out.converged = true;
        break;
      }
    }
    out.U = U;
    out.value = J;
    out.feasible = viol <= settings_.feasibilityTol;
    return out;
  }

  OracleResult solveNonlinear(const Vector& x0, const OracleResult* warm) {
    const int N = p_.horizon, m = p_.controlDim, n = N * m;
    std::vector<Vector> starts;
    if (warm && warm->controls.size() == n) starts.push_back(warm->controls);
    starts.push_back(Vector::Zero(n));
    starts.push_back(lqrStart(x0));
    const Box uc = p_.tightenedControls();
    for (int s = 0; s < settings_.randomStarts; ++s) {
      std::mt19937_64 rng(settings_.seed + 7919ULL * s);
      Vector U(n);
      for (int t = 0; t < N; ++t) {
        for (int j = 0; j < m; ++j) {
          std::uniform_real_distribution<double> dist(uc.lower[j], uc.upper[j]);
          U[t * m + j] = dist(rng);
        }
      }
      starts.push_back(U);
    }
    OracleResult r;
    r.firstControl = Vector::Zero(m);
    bool anyStalled = false;
    StartResult best;
    bool have = false;
    for (const Vector& U0 : starts) {
      StartResult s = runSqp(x0, U0);
      r.stats.iterations += s.iterations;
      ++r.stats.starts;
      if (!s.converged) {
        anyStalled = anyStalled || s.feasible;
        continue;
      }
      if (!s.feasible) continue;
      if (!have || better(s, best)) {
        best = std::move(s);
        have = true;
      }
    }
    if (!have) {
      r.status = anyStalled ? OracleStatus::NonConverged : OracleStatus::Infeasible;
      return r;
    }
    r.status = OracleStatus::Feasible;
    r.controls = best.U;
    r.firstControl = best.U.head(m);
    r.value = std::max(best.value, 0.0);
    return r;
  }

  static bool better(const StartResult& a, const StartResult& b) {
    const double tol = 1e-9 * (1.0 + std::abs(b.value));
    if (a.value < b.value - tol) return true;
    if (a.value > b.value + tol) return false;
    return std::lexicographical_compare(a.U.data(), a.U.data() + a.U.size(), b.U.data(), b.U.data() + b.U.size());
  }

  Vector lqrStart(const Vector& x0) const {
    const int N = p_.horizon, m = p_.controlDim;
    Matrix A0, B0;
    p_.jacobians(Vector::Zero(p_.dim), Vector::Zero(m), A0, B0);
    const Matrix Pf = p_.P.isZero(0.0) ? p_.Q : p_.P;
    const auto K = riccatiReference(A0, B0, p_.Q, p_.R, Pf, N);
    const Box uc = p_.tightenedControls();
    Vector U(N * m);
    Vector x = x0;
    for (int t = 0; t < N; ++t) {
      Vector u = (-K[t] * x).cwiseMax(uc.lower).cwiseMin(uc.upper);
      if (!u.allFinite()) u.setZero();
      U.segment(t * m, m) = u;
      x = p_.nominal(x, u);
      if (!x.allFinite()) x.setZero();
    }
    return U;
  }

  MpcProblem p_;
  OracleSettings settings_;
  bool controlsEmpty_ = false;
  Matrix stateMargin_;
  Vector terminalBound_;
  double ellipsoidLevel_ = 1.0;
  // condensed linear data
  Matrix Phi_, Gamma_, F_, W_, stateRowsX0_;
  Vector stateRowsRhs_, lower_, upper0_, rowMin_;
  DenseQpSolver qp_;
};

inline OracleResult solveAtState(const MpcProblem& p, const Vector& x0, const OracleSettings& settings = {}) {
  MpcOracle oracle(p, settings);
  return oracle.solve(x0);
}

struct SampleStats {
  Index feasible = 0;
  Index infeasible = 0;
  Index nonConverged = 0;
  Index total = 0;
};

/// Solves the oracle at every lattice point (origin 0, spacing h) inside box. Rows along the last axis
/// run sequentially with warm starts; rows are dealt to threads round-robin and written to fixed slots,
/// so the result does not depend on the thread count.
inline FeasibleNet sampleNet(const MpcProblem& p, double h, const Box& box, const OracleSettings& settings = {},
                             std::vector<OracleStatus>* statuses = nullptr) {
  if (!(h > 0.0) || !std::isfinite(h)) throw InputError("sampleNet: h must be positive");
  if (box.dim() != p.dim) throw InputError("sampleNet: box dimension mismatch");
  const Vector origin = Vector::Zero(p.dim);
  IndexBox ib = IndexBox::covering(box, h, origin);
  FeasibleNet net;
  if (ib.empty()) {
    // No lattice point inside: keep a valid but empty field.
    IndexBox one{MultiIndex(p.dim, 0), MultiIndex(p.dim, 0)};
    net.samples = LatticeField(h, origin, one, p.controlDim);
    return net;
  }
  net.samples = LatticeField(h, origin, ib, p.controlDim);
  const int d = p.dim;
  const Index rowLen = ib.extent(d - 1);
  const Index rows = ib.count() / rowLen;
  std::vector<OracleStatus> status(ib.count(), OracleStatus::Infeasible);
  std::vector<Vector> values(ib.count());

  auto work = [&](int tid, int nthreads) {
    MpcOracle oracle(p, settings);
    for (Index row = tid; row < rows; row += nthreads) {
      OracleResult prev;
      bool havePrev = false;
      for (Index j = 0; j < rowLen; ++j) {
        const Index k = row * rowLen + j;
        const MultiIndex m = net.samples.unlinear(k);
        const OracleResult res = oracle.solve(net.samples.point(m), havePrev ? &prev : nullptr);
        status[k] = res.status;
        if (res.feasible()) {
          values[k] = res.firstControl;
          prev = res;
          havePrev = true;
        }
      }
    }
  };
  const int nthreads = std::max(1, settings.threads);
  if (nthreads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t, nthreads);
    for (auto& th : pool) th.join();
  }
  for (Index k = 0; k < ib.count(); ++k) {
    switch (status[k]) {
      case OracleStatus::Feasible: net.samples.setLinear(k, values[k], kFeasible); break;
      case OracleStatus::Infeasible: ++net.infeasibleCount; break;
      case OracleStatus::NonConverged: ++net.nonConvergedCount; break;
    }
  }
  if (statuses) *statuses = std::move(status);
  return net;
}

}  // namespace quifs
