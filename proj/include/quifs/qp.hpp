#pragma once

#include "quifs/common.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <limits>

namespace quifs {

struct QpSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int maxIterations = 20000;
  double tolerance = 1e-8;       // primal/dual residual and KKT tolerance
  double infeasibilityTol = 1e-7;
  int polishEvery = 25;
};

enum class QpStatus { Solved, PrimalInfeasible, MaxIterations };

struct QpResult {
  QpStatus status = QpStatus::MaxIterations;
  Vector x;  // primal solution
  Vector y;  // multipliers of l <= C x <= u (negative at active lower bounds)
  Vector z;  // C x projected onto [l, u]
  int iterations = 0;
  double primalResidual = std::numeric_limits<double>::infinity();
  double dualResidual = std::numeric_limits<double>::infinity();
  bool polished = false;
};

/// min 1/2 x'Px + q'x  s.t.  l <= Cx <= u, for small dense problems.
/// Operator splitting with over-relaxation and a cached factorization of P + sigma I + C' diag(rho) C;
/// equality rows get a 1e3 larger rho, and rho is rebalanced when the residuals drift apart. Every few
/// iterations the solver guesses the active set from the
/// current iterate, solves the reduced KKT system and keeps that point if it passes the full KKT test.
class DenseQpSolver {
 public:
  DenseQpSolver() = default;
  DenseQpSolver(Matrix P, Matrix C, QpSettings settings = {}) { setup(std::move(P), std::move(C), settings); }

  void setup(Matrix P, Matrix C, QpSettings settings = {}) {
    if (P.rows() != P.cols()) throw InputError("qp: P must be square");
    if (C.cols() != P.cols()) throw InputError("qp: C column count must match P");
    P_ = std::move(P);
    C_ = std::move(C);
    settings_ = settings;
    factored_ = false;
  }

  int variables() const { return static_cast<int>(P_.rows()); }
  int constraints() const { return static_cast<int>(C_.rows()); }
  const Matrix& P() const { return P_; }
  const Matrix& C() const { return C_; }
  QpSettings& settings() { return settings_; }

  /// Warm start from (x, y) when sizes match, else from zero.
  QpResult solve(const Vector& q, const Vector& l, const Vector& u, const Vector* warmX = nullptr,
                 const Vector* warmY = nullptr) {
    const int n = variables();
    const int m = constraints();
    if (q.size() != n || l.size() != m || u.size() != m) throw InputError("qp: vector size mismatch");
    for (int i = 0; i < m; ++i) {
      if (l[i] > u[i]) {
        QpResult r;
        r.status = QpStatus::PrimalInfeasible;
        r.x = Vector::Zero(n);
        r.y = Vector::Zero(m);
        r.z = Vector::Zero(m);
        return r;
      }
    }
    Vector rho(m);
    for (int i = 0; i < m; ++i) {
      rho[i] = (std::isfinite(l[i]) && std::isfinite(u[i]) && u[i] - l[i] < 1e-12) ? 1e3 * settings_.rho
                                                                                   : settings_.rho;
    }
    factor(rho);

    Vector x = (warmX && warmX->size() == n) ? *warmX : Vector::Zero(n);
    Vector y = (warmY && warmY->size() == m) ? *warmY : Vector::Zero(m);
    Vector z = (C_ * x).cwiseMax(l).cwiseMin(u);
    const double a = settings_.alpha;
    const double sigma = settings_.sigma;
    QpResult res;
    Vector xt(n), zt(m), zPrev(m), yPrev(m), dy(m), rhs(n);

    // A warm start often already sits on the right active set.
    if (tryPolish(q, l, u, y, z, res)) return res;

    for (int k = 1; k <= settings_.maxIterations; ++k) {
      rhs = sigma * x - q + C_.transpose() * (rho.cwiseProduct(z) - y);
      xt = llt_.solve(rhs);
      zt = C_ * xt;
      x = a * xt + (1.0 - a) * x;
      zPrev = z;
      yPrev = y;
      const Vector zr = a * zt + (1.0 - a) * zPrev;
      z = (zr + y.cwiseQuotient(rho)).cwiseMax(l).cwiseMin(u);
      y = y + rho.cwiseProduct(zr - z);
      res.iterations = k;

      const bool check = k % settings_.polishEvery == 0 || k == settings_.maxIterations;
      if (!check) continue;
      res.primalResidual = m > 0 ? (C_ * x - z).lpNorm<Eigen::Infinity>() : 0.0;
      res.dualResidual = (P_ * x + q + C_.transpose() * y).lpNorm<Eigen::Infinity>();
      if (tryPolish(q, l, u, y, z, res)) {
        res.iterations = k;
        return res;
      }
      if (res.primalResidual <= settings_.tolerance && res.dualResidual <= settings_.tolerance) {
        res.status = QpStatus::Solved;
        res.x = x;
        res.y = y;
        res.z = z;
        return res;
      }
      dy = y - yPrev;
      if (primalInfeasible(dy, l, u)) {
        res.status = QpStatus::PrimalInfeasible;
        res.x = x;
        res.y = dy;
        res.z = z;
        return res;
      }
      // Rebalance rho when the normalized residuals drift apart by more than 5x.
      if (k % (4 * settings_.polishEvery) == 0 && m > 0) {
        const double pScale = std::max({(C_ * x).lpNorm<Eigen::Infinity>(), z.lpNorm<Eigen::Infinity>(), 1e-12});
        const double dScale = std::max({(P_ * x).lpNorm<Eigen::Infinity>(),
                                        (C_.transpose() * y).lpNorm<Eigen::Infinity>(),
                                        q.lpNorm<Eigen::Infinity>(), 1e-12});
        const double ratio =
            std::sqrt((res.primalResidual / pScale) / std::max(res.dualResidual / dScale, 1e-300));
        if (std::isfinite(ratio) && (ratio > 5.0 || ratio < 0.2)) {
          const double f = std::clamp(ratio, 1e-3, 1e3);
          for (int i = 0; i < m; ++i) rho[i] = std::clamp(rho[i] * f, 1e-6, 1e6);
          factor(rho);
        }
      }
    }
    res.status = QpStatus::MaxIterations;
    res.x = x;
    res.y = y;
    res.z = z;
    return res;
  }

  /// Largest violation of the KKT conditions at (x, y).
  double kktResidual(const Vector& q, const Vector& l, const Vector& u, const Vector& x, const Vector& y) const {
    double worst = (P_ * x + q + C_.transpose() * y).lpNorm<Eigen::Infinity>();
    const Vector cx = C_ * x;
    for (int i = 0; i < constraints(); ++i) {
      worst = std::max(worst, std::max(l[i] - cx[i], cx[i] - u[i]));
      // Complementarity: y < 0 only at the lower bound, y > 0 only at the upper bound.
      if (y[i] < 0.0 && std::isfinite(l[i])) worst = std::max(worst, std::min(-y[i], cx[i] - l[i]));
      if (y[i] < 0.0 && !std::isfinite(l[i])) worst = std::max(worst, -y[i]);
      if (y[i] > 0.0 && std::isfinite(u[i])) worst = std::max(worst, std::min(y[i], u[i] - cx[i]));
      if (y[i] > 0.0 && !std::isfinite(u[i])) worst = std::max(worst, y[i]);
    }
    return worst;
  }

 private:
  void factor(const Vector& rho) {
    if (factored_ && factoredFor_.size() == rho.size() && factoredFor_ == rho) return;
    Matrix K = P_ + settings_.sigma * Matrix::Identity(variables(), variables()) +
               C_.transpose() * rho.asDiagonal() * C_;
    llt_.compute(K);
    if (llt_.info() != Eigen::Success) throw InputError("qp: P must be positive semidefinite");
    factoredFor_ = rho;
    factored_ = true;
  }

  bool primalInfeasible(const Vector& dy, const Vector& l, const Vector& u) const {
    const double norm = dy.lpNorm<Eigen::Infinity>();
    if (norm < 1e-14) return false;
    const double tol = settings_.infeasibilityTol * norm;
    if ((C_.transpose() * dy).lpNorm<Eigen::Infinity>() > tol) return false;
    double support = 0.0;
    for (int i = 0; i < dy.size(); ++i) {
      if (dy[i] > 0.0) {
        if (!std::isfinite(u[i])) return false;
        support += u[i] * dy[i];
      } else if (dy[i] < 0.0) {
        if (!std::isfinite(l[i])) return false;
        support += l[i] * dy[i];
      }
    }
    return support < -tol;
  }

  bool tryPolish(const Vector& q, const Vector& l, const Vector& u, const Vector& y, const Vector& z,
                 QpResult& res) const {
    // First guess from the multiplier signs; second guess from rows sitting on a bound.
    return polishWith(q, l, u, y, z, 0.0, res) || polishWith(q, l, u, y, z, 1e-7, res);
  }

  bool polishWith(const Vector& q, const Vector& l, const Vector& u, const Vector& y, const Vector& z, double near,
                  QpResult& res) const {
    const int n = variables();
    const int m = constraints();
    std::vector<int> active;
    std::vector<double> target;
    for (int i = 0; i < m; ++i) {
      const bool eq = std::isfinite(l[i]) && std::isfinite(u[i]) && u[i] - l[i] < 1e-12;
      const bool atLower = std::isfinite(l[i]) && (near > 0.0 ? z[i] - l[i] <= near * (1.0 + std::abs(l[i]))
                                                              : z[i] - l[i] < -y[i]);
      const bool atUpper = std::isfinite(u[i]) && (near > 0.0 ? u[i] - z[i] <= near * (1.0 + std::abs(u[i]))
                                                              : u[i] - z[i] < y[i]);
      if (eq || (atLower && !(atUpper && y[i] > 0.0))) {
        active.push_back(i);
        target.push_back(l[i]);
      } else if (atUpper) {
        active.push_back(i);
        target.push_back(u[i]);
      }
    }
    const int na = static_cast<int>(active.size());
    if (na > n) return false;
    Matrix K = Matrix::Zero(n + na, n + na);
    K.topLeftCorner(n, n) = P_;
    Vector rhs(n + na);
    rhs.head(n) = -q;
    for (int k = 0; k < na; ++k) {
      K.block(n + k, 0, 1, n) = C_.row(active[k]);
      K.block(0, n + k, n, 1) = C_.row(active[k]).transpose();
      rhs[n + k] = target[k];
    }
    const double delta = 1e-9;
    Matrix Kreg = K;
    Kreg.topLeftCorner(n, n).diagonal().array() += delta;
    Kreg.bottomRightCorner(na, na).diagonal().array() -= delta;
    Eigen::PartialPivLU<Matrix> lu(Kreg);
    Vector sol = lu.solve(rhs);
    for (int it = 0; it < 5; ++it) sol += lu.solve(rhs - K * sol);
    if (!sol.allFinite()) return false;

    Vector xp = sol.head(n);
    Vector yp = Vector::Zero(m);
    for (int k = 0; k < na; ++k) yp[active[k]] = sol[n + k];
    const double kkt = kktResidual(q, l, u, xp, yp);
    if (!(kkt <= settings_.tolerance)) return false;
    res.status = QpStatus::Solved;
    res.x = xp;
    res.y = yp;
    res.z = (C_ * xp).cwiseMax(l).cwiseMin(u);
    res.polished = true;
    res.primalResidual = m > 0 ? (C_ * xp - res.z).lpNorm<Eigen::Infinity>() : 0.0;
    res.dualResidual = (P_ * xp + q + C_.transpose() * yp).lpNorm<Eigen::Infinity>();
    return true;
  }

  Matrix P_;
  Matrix C_;
  QpSettings settings_;
  Eigen::LLT<Matrix> llt_;
  Vector factoredFor_;
  bool factored_ = false;
};

}  // namespace quifs
