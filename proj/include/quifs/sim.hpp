#pragma once

#include "quifs/common.hpp"
#include "quifs/mpc.hpp"
#include "quifs/synth.hpp"

#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace quifs {

enum class DisturbanceMode { Zero, Vertices, Uniform };

struct DisturbanceSpec {
  DisturbanceMode mode = DisturbanceMode::Zero;
  std::uint64_t seed = 1;
};

/// Disturbance sequence over the box W: zero, cycling through the 2^d vertices, or seeded uniform.
/// Uniform draws use the top 53 bits of mt19937_64, so runs are identical across standard libraries.
class DisturbanceGenerator {
 public:
  DisturbanceGenerator(Box w, DisturbanceSpec spec) : w_(std::move(w)), spec_(spec), rng_(spec.seed) {}

  Vector next() {
    const int d = w_.dim();
    Vector out = Vector::Zero(d);
    switch (spec_.mode) {
      case DisturbanceMode::Zero: break;
      case DisturbanceMode::Vertices: {
        const std::uint64_t v = t_ % (std::uint64_t{1} << std::min(d, 62));
        for (int i = 0; i < d; ++i) out[i] = ((v >> i) & 1) ? w_.upper[i] : w_.lower[i];
        break;
      }
      case DisturbanceMode::Uniform:
        for (int i = 0; i < d; ++i) {
          const double r = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
          out[i] = w_.lower[i] + r * (w_.upper[i] - w_.lower[i]);
        }
        break;
    }
    ++t_;
    return out;
  }

 private:
  Box w_;
  DisturbanceSpec spec_;
  std::mt19937_64 rng_;
  std::uint64_t t_ = 0;
};

using Controller = std::function<std::optional<Vector>(const Vector&)>;

struct Trajectory {
  std::vector<Vector> states;        // T + 1 when the run completes
  std::vector<Vector> controls;      // T
  std::vector<Vector> disturbances;  // T
  std::vector<std::uint8_t> stateOk;    // x_t in M
  std::vector<std::uint8_t> controlOk;  // u_t in U
  bool outOfDomain = false;
  int outOfDomainStep = -1;
  Index constraintViolations = 0;

  int steps() const { return static_cast<int>(controls.size()); }
};

/// x_{t+1} = f(x_t, u_t) + w_t with u_t from the controller; stops early when the controller has no value.
inline Trajectory simulateClosedLoop(const MpcProblem& p, const Controller& controller, const Vector& x0, int T,
                                     DisturbanceSpec spec = {}) {
  if (x0.size() != p.dim) throw InputError("simulate: x0 dimension mismatch");
  if (T < 0) throw InputError("simulate: negative step count");
  requireFinite(x0, "simulate x0");
  DisturbanceGenerator gen(p.disturbance, spec);
  Trajectory tr;
  Vector x = x0;
  auto recordState = [&](const Vector& s) {
    tr.states.push_back(s);
    const bool ok = p.stateSet.contains(s, 1e-9);
    tr.stateOk.push_back(ok);
    if (!ok) ++tr.constraintViolations;
  };
  recordState(x);
  for (int t = 0; t < T; ++t) {
    const std::optional<Vector> u = controller(x);
    if (!u) {
      tr.outOfDomain = true;
      tr.outOfDomainStep = t;
      break;
    }
    const bool uok = p.controlSet.contains(*u, 1e-12);
    tr.controlOk.push_back(uok);
    if (!uok) ++tr.constraintViolations;
    const Vector w = gen.next();
    tr.controls.push_back(*u);
    tr.disturbances.push_back(w);
    x = p.step(x, *u, w);
    recordState(x);
  }
  return tr;
}

inline Trajectory simulateClosedLoop(const MpcProblem& p, const ExplicitPolicy& pol, const Vector& x0, int T,
                                     DisturbanceSpec spec = {}) {
  return simulateClosedLoop(p, [&pol](const Vector& x) { return evaluatePolicy(pol, x); }, x0, T, spec);
}

struct StabilityReport {
  bool recursivelyFeasible = true;        // no OutOfDomain and the OCP solvable at every visited state
  double terminalNeighborhoodRadius = 0;  // max |x_t|_2 over the last tailWindow + 1 states
  Index constraintViolations = 0;
  double supTrackingError = 0;   // twin runs: sup_t |u_online - u_explicit|_inf
  double supStateDeviation = 0;  // twin runs: sup_t |x_online - x_explicit|_inf
  double matchedStateGap = 0;    // sup over explicit states of |mu*(x_t) - mu_dagger(x_t)|_inf
  double valueDescentOffset = 0; // max_t V(x_{t+1}) - V(x_t) along the explicit run
  Index flaggedSteps = 0;        // online oracle not feasible (or not converged)
  int steps = 0;
};

/// Largest |x_t|_2 over the final `window` steps (and the last state).
inline double tailRadius(const Trajectory& tr, int window = 20) {
  double r = 0.0;
  const int n = static_cast<int>(tr.states.size());
  for (int t = std::max(0, n - 1 - window); t < n; ++t) r = std::max(r, tr.states[t].norm());
  return r;
}

struct RhcComparison {
  Trajectory explicitRun;
  Trajectory onlineRun;
  std::vector<double> gap;         // per step, twin runs
  std::vector<double> matchedGap;  // per explicit step, same state
  std::vector<double> value;       // V_N at explicit states (inf where infeasible)
  StabilityReport report;
};

/// Twin closed loops from x0 under the same disturbance realization: one with the explicit policy,
/// one solving the approximation-ready OCP online. The oracle is also queried at every explicit state,
/// which gives the matched-state gap and the value-descent offset.
inline RhcComparison compareWithOnlineRhc(const MpcProblem& problem, const ExplicitPolicy& pol, const Vector& x0,
                                          int T, DisturbanceSpec spec = {}, const OracleSettings& settings = {},
                                          int tailWindow = 20) {
  MpcProblem p = problem;
  p.epsilon = pol.budget.epsilon;
  MpcOracle oracle(p, settings);
  RhcComparison cmp;
  StabilityReport& rep = cmp.report;

  OracleResult prev;
  bool havePrev = false;
  cmp.onlineRun = simulateClosedLoop(
      p,
      [&](const Vector& x) -> std::optional<Vector> {
        const OracleResult r = oracle.solve(x, havePrev ? &prev : nullptr);
        if (!r.feasible()) return std::nullopt;
        prev = r;
        havePrev = true;
        return r.firstControl;
      },
      x0, T, spec);

  havePrev = false;
  cmp.explicitRun = simulateClosedLoop(p, pol, x0, T, spec);
  const Trajectory& ex = cmp.explicitRun;
  for (size_t t = 0; t < ex.states.size(); ++t) {
    const OracleResult r = oracle.solve(ex.states[t], havePrev ? &prev : nullptr);
    if (r.feasible()) {
      prev = r;
      havePrev = true;
    } else {
      ++rep.flaggedSteps;
      rep.recursivelyFeasible = false;
    }
    cmp.value.push_back(r.feasible() ? r.value : std::numeric_limits<double>::infinity());
    if (t < ex.controls.size() && r.feasible()) {
      const double g = (r.firstControl - ex.controls[t]).lpNorm<Eigen::Infinity>();
      cmp.matchedGap.push_back(g);
      rep.matchedStateGap = std::max(rep.matchedStateGap, g);
    }
  }
  for (size_t t = 0; t + 1 < cmp.value.size(); ++t) {
    const double dv = cmp.value[t + 1] - cmp.value[t];
    if (std::isfinite(dv)) rep.valueDescentOffset = t == 0 ? dv : std::max(rep.valueDescentOffset, dv);
  }
  const size_t n = std::min(ex.controls.size(), cmp.onlineRun.controls.size());
  for (size_t t = 0; t < n; ++t) {
    const double g = (cmp.onlineRun.controls[t] - ex.controls[t]).lpNorm<Eigen::Infinity>();
    cmp.gap.push_back(g);
    rep.supTrackingError = std::max(rep.supTrackingError, g);
  }
  for (size_t t = 0; t < std::min(ex.states.size(), cmp.onlineRun.states.size()); ++t) {
    rep.supStateDeviation =
        std::max(rep.supStateDeviation, (cmp.onlineRun.states[t] - ex.states[t]).lpNorm<Eigen::Infinity>());
  }
  if (ex.outOfDomain) rep.recursivelyFeasible = false;
  rep.constraintViolations = ex.constraintViolations;
  rep.terminalNeighborhoodRadius = tailRadius(ex, tailWindow);
  rep.steps = ex.steps();
  return cmp;
}

}  // namespace quifs
