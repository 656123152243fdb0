// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <sstream>

using namespace quifs;
using quifs::testing::box;
using quifs::testing::uniform;
using quifs::testing::vec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string configPath(const char* name) { return std::string(QUIFS_SOURCE_DIR) + "/configs/" + name; }

// ---------------------------------------------------------------------------------------------

void spacingAndShape() {
  const GeneratingFunction g = makeKernel("laguerre-m3", 2);
  bool ok = true;
  std::string detail;
  // Reference spacings, each good to half a unit in its last printed digit.
  const struct {
    double eps, hExpected, halfUnit;
  } rows[] = {{0.05, 0.04, 0.005}, {0.005, 0.004, 0.0005}};
  double worstMs = 0.0;
  for (const auto& r : rows) {
    selectBudget(r.eps, g, 2.0, 2.0);  // warm the saturation cache out of the timing
    const auto t0 = Clock::now();
    const ApproximationBudget b = selectBudget(r.eps, g, 2.0, 2.0);
    const double ms = 1e3 * seconds(t0);
    worstMs = std::max(worstMs, ms);
    ok = ok && b.shape == 2.0 && std::abs(b.h - r.hExpected) < r.halfUnit && b.valid();
    detail += fmt("eps=%g: D=%g h=%.2g (%.6f) r0=%.3f; ", r.eps, b.shape, b.h, b.h, b.r0);
  }
  ok = ok && worstMs < 1.0;
  report(1, ok, detail + fmt("slowest %.3f ms", worstMs));
}

// ---------------------------------------------------------------------------------------------

std::optional<Vector> saturatedLinear(const Vector& x) {
  return vec({std::clamp(0.8 * x[0] - 0.5 * x[1], -0.5, 0.5)});
}

std::optional<Vector> clippedCone(const Vector& x) { return vec({std::min(std::abs(x[0]) + std::abs(x[1]), 0.8)}); }

// Continuous, four affine pieces split by the signs of x1 and x2.
std::optional<Vector> fourRegion(const Vector& x) {
  return vec({0.6 * x[0] - 0.3 * std::max(x[0], 0.0) + 0.4 * std::abs(x[1]) - 0.2});
}

void syntheticTargets() {
  const struct {
    const char* name;
    std::optional<Vector> (*f)(const Vector&);
  } targets[] = {{"saturated-linear", saturatedLinear}, {"clipped-cone", clippedCone}, {"pwa-4", fourRegion}};
  bool ok = true;
  std::string detail;
  for (const auto& t : targets) {
    for (double eps : {0.05, 0.005}) {
      const auto t0 = Clock::now();
      const ExplicitPolicy pol = synthesizeFromSampler(t.f, 1, box({-1, -1}, {1, 1}), box({-1}, {1}), eps, "laguerre-m3");
      const double synthSec = seconds(t0);
      CertifyOptions co;
      co.maxPoints = 100000;
      const CertificationReport rep = certify(pol, t.f, co);
      const bool pass = rep.passed() && synthSec < 30.0 && rep.skipped == 0;
      ok = ok && pass;
      detail += fmt("%s eps=%g err=%.3g synth=%.1fs%s; ", t.name, eps, rep.maxError, synthSec, pass ? "" : " FAILED");
    }
  }
  report(2, ok, detail);
}

// ---------------------------------------------------------------------------------------------

struct DoubleIntegratorRun {
  ProblemConfig cfg;
  ExplicitPolicy pol;
};

DoubleIntegratorRun doubleIntegratorEndToEnd() {
  ProblemConfig cfg = loadConfig(configPath("double-integrator.json"));
  const auto t0 = Clock::now();
  ExplicitPolicy pol = synthesize(cfg.problem, cfg.epsilon, cfg.kernel, cfg.synth);
  DoubleIntegratorRun run{std::move(cfg), std::move(pol)};
  const double synthSec = seconds(t0);
  MpcProblem p = run.cfg.problem;
  p.epsilon = run.cfg.epsilon;
  MpcOracle oracle(p, run.cfg.synth.oracle);
  CertifyOptions co;
  co.maxPoints = 2000;
  const CertificationReport rep = certify(run.pol, oracleTruth(oracle), co);
  const double total = seconds(t0);
  const bool ok = rep.passed() && total < 15 * 60.0;
  report(3, ok,
         fmt("h=%.4g r0=%.3g L0=%.3g points=%lld checked=%lld skipped=%lld err=%.3g eps=%g synth=%.1fs total=%.1fs",
             run.pol.budget.h, run.pol.budget.r0, run.pol.budget.L0, static_cast<long long>(run.pol.field.size()),
             static_cast<long long>(rep.checked), static_cast<long long>(rep.skipped), rep.maxError,
             run.cfg.epsilon, synthSec, total));
  return run;
}

// ---------------------------------------------------------------------------------------------

void truncationBoundHolds() {
  std::mt19937_64 rng(4242);
  Index violations = 0, checks = 0;
  double worstRatio = 0.0;
  for (int d : {1, 2}) {
    const GeneratingFunction g0 = makeKernel("laguerre-m3", d);
    const GeneratingFunction g = g0.withTruncationConstant(calibrateTruncationConstant(g0, 2.0, 200));
    const Index half = d == 1 ? 60 : 20;
    for (int t = 0; t < 100; ++t) {
      IndexBox b{MultiIndex(d, -half), MultiIndex(d, half)};
      LatticeField f(1.0, Vector::Zero(d), b, 1);
      forEachIndex(b, [&](std::span<const Index> m) { f.set(m, vec({uniform(rng, -1, 1)})); });
      const Vector x = Vector::NullaryExpr(d, [&](Index) { return uniform(rng, -1, 1); });
      const double parent = parentInterpolate(f, g, 2.0, x, half)[0];
      for (double r0 : {2.0, 3.0, 5.0, 7.0}) {
        const double diff = std::abs(parent - truncatedInterpolate(f, g, 2.0, r0, x)[0]);
        const double bound = truncationBound(g, 2.0, r0, f.supNorm());
        worstRatio = std::max(worstRatio, diff / bound);
        ++checks;
        if (diff > bound) ++violations;
      }
    }
  }
  report(4, violations == 0,
         fmt("%lld checks, %lld violations, worst |diff|/bound = %.3g", static_cast<long long>(checks),
             static_cast<long long>(violations), worstRatio));
}

// ---------------------------------------------------------------------------------------------

void extensionPreservesRank() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const double L0 = 2.0;
  IndexBox b{{-15, -15}, {15, 15}};
  FeasibleNet net;
  net.samples = LatticeField(0.1, Vector::Zero(2), b, 2);
  forEachIndex(b, [&](std::span<const Index> m) {
    const Vector x = net.samples.point(m);
    if (x.norm() > 1.2 || (x[0] > 0.2 && std::abs(x[1]) < 0.3)) {
      ++net.infeasibleCount;
      return;
    }
    net.samples.set(m, vec({0.9 * std::sin(x[0] + x[1]) / std::sqrt(2.0), 0.9 * std::abs(x[0] - 0.3) - 0.2}));
  });
  const double raw = estimateLipschitz(net).rawRank;
  const LatticeField e = lipschitzExtend(net, L0, extensionTarget(net, 5.0));

  bool exact = true;
  forEachIndex(net.samples.box(), [&](std::span<const Index> m) {
    if (net.samples.flag(m) != kFeasible) return;
    const Vector a = e.value(m), c = net.samples.value(m);
    exact = exact && e.flag(m) == kFeasible && std::memcmp(a.data(), c.data(), sizeof(double) * a.size()) == 0;
  });

  std::vector<Index> stored;
  for (Index k = 0; k < e.size(); ++k) {
    if (e.flagLinear(k) != kAbsent) stored.push_back(k);
  }
  std::uniform_int_distribution<size_t> pick(0, stored.size() - 1);
  Index violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const Index i = stored[pick(rng)], j = stored[pick(rng)];
    const double dist = (e.point(e.unlinear(i)) - e.point(e.unlinear(j))).norm();
    const Vector diff = e.valueLinear(i) - e.valueLinear(j);
    if (diff.lpNorm<Eigen::Infinity>() > L0 * dist + 1e-9) ++violations;
  }
  const double sec = seconds(t0);
  report(5, raw <= L0 && exact && violations == 0 && sec < 10.0,
         fmt("net rank %.3g, %zu stored points, 10000 pairs, %lld violations, bit-exact on net: %s, %.2fs", raw,
             stored.size(), static_cast<long long>(violations), exact ? "yes" : "no", sec));
}

// ---------------------------------------------------------------------------------------------

double rolloutCost(const MpcProblem& p, Vector x, const std::vector<double>& u) {
  double J = 0.0;
  for (double v : u) {
    const Vector uv = vec({v});
    J += x.dot(p.Q * x) + uv.dot(p.R * uv);
    x = p.nominal(x, uv);
  }
  return J + x.dot(p.P * x);
}

void oracleReferences() {
  std::mt19937_64 rng(606);
  double worstLqr = 0.0;
  {
    MpcProblem p = quifs::testing::doubleIntegrator();
    p.stateSet = Polytope::fromBox(box({-1e6, -1e6}, {1e6, 1e6}));
    p.controlSet = box({-1e6}, {1e6});
    const Matrix K0 = riccatiReference(p)[0];
    MpcOracle oracle(p);
    for (int t = 0; t < 50; ++t) {
      const Vector x0 = vec({uniform(rng, -5, 5), uniform(rng, -1, 1)});
      const OracleResult r = oracle.solve(x0);
      worstLqr = std::max(worstLqr, r.feasible() ? std::abs(r.firstControl[0] + (K0 * x0)[0]) : 1e300);
    }
  }
  double worstValueExcess = -1e300, worstU0 = 0.0;
  bool nlOk = true;
  MpcProblem p = quifs::testing::cubicOscillator(3);
  MpcOracle oracle(p);
  const double umax = 5.0, step = 2.0 * umax / 8.0;
  for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    for (double b : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
      const Vector x0 = vec({a, b});
      double best = std::numeric_limits<double>::infinity(), bestU0 = 0.0;
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
      if (!r.feasible()) {
        nlOk = false;
        continue;
      }
      worstValueExcess = std::max(worstValueExcess, r.value - best);
      worstU0 = std::max(worstU0, std::abs(r.firstControl[0] - bestU0));
    }
  }
  nlOk = nlOk && worstValueExcess <= 1e-9 && worstU0 <= step + 1e-9;
  report(6, worstLqr <= 1e-6 && nlOk,
         fmt("linear vs Riccati max |du| = %.2e; cubic N=3 vs 9^3 enumeration: value excess %.2e, |du0| %.3g "
             "(grid step %.3g)",
             worstLqr, worstValueExcess, worstU0, step));
}

// ---------------------------------------------------------------------------------------------

void closedLoop(const DoubleIntegratorRun& di) {
  bool ok = true;
  std::string detail;
  {
    MpcProblem p = di.cfg.problem;
    p.epsilon = di.cfg.epsilon;
    MpcOracle oracle(p, di.cfg.synth.oracle);
    std::mt19937_64 rng(2024);
    int runs = 0, tries = 0;
    Index violations = 0, ood = 0;
    double worstTail = 0.0;
    while (runs < 50 && tries < 5000) {
      ++tries;
      const Vector x0 = vec({uniform(rng, -6, 6), uniform(rng, -1, 1)});
      if (!di.pol.inDomain(x0) || !oracle.solve(x0).feasible()) continue;
      const Trajectory tr = simulateClosedLoop(p, di.pol, x0, 200, {DisturbanceMode::Zero, 1000u + runs});
      ++runs;
      violations += tr.constraintViolations;
      ood += tr.outOfDomain ? 1 : 0;
      worstTail = std::max(worstTail, tailRadius(tr));
    }
    const bool pass = runs == 50 && violations == 0 && ood == 0 && worstTail <= 0.1;
    ok = ok && pass;
    detail += fmt("double integrator: %d runs, %lld violations, %lld out of domain, worst tail %.3g; ", runs,
                  static_cast<long long>(violations), static_cast<long long>(ood), worstTail);
  }
  {
    const ProblemConfig cfg = loadConfig(configPath("cubic-oscillator.json"));
    const auto t0 = Clock::now();
    const ExplicitPolicy pol = synthesize(cfg.problem, cfg.epsilon, cfg.kernel, cfg.synth);
    const double synthSec = seconds(t0);
    const RhcComparison cmp = compareWithOnlineRhc(cfg.problem, pol, vec({2.0, -2.0}), 100, {}, cfg.synth.oracle);
    const StabilityReport& r = cmp.report;
    const Vector xT = cmp.explicitRun.states.back();
    const bool pass = r.recursivelyFeasible && r.constraintViolations == 0 && xT.norm() <= 0.1 &&
                      r.matchedStateGap <= cfg.epsilon;
    ok = ok && pass;
    detail += fmt("cubic oscillator from (2,-2): |x_T| = %.3g, tail %.3g, matched gap %.3g, twin gap %.3g, "
                  "synth %.0fs",
                  xT.norm(), r.terminalNeighborhoodRadius, r.matchedStateGap, r.supTrackingError, synthSec);
  }
  report(7, ok, detail);
}

// ---------------------------------------------------------------------------------------------

void kernelMoments() {
  const struct {
    const char* name;
    int dim;
  } cases[] = {{"gauss", 1},       {"gauss", 2},       {"laguerre-m3", 1}, {"laguerre-m3", 2},
               {"laguerre-m3", 4}, {"laguerre-m5", 2}, {"trig-gauss", 1},  {"trig-gauss", 2},
               {"sech", 1},        {"sech", 2}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const GeneratingFunction g = makeKernel(c.name, c.dim);
    const MomentReport rep = verifyMoments(g, 1e-6, 1e-8);
    bool monotone = true;
    double prev = std::numeric_limits<double>::infinity();
    for (double D : {0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0}) {
      const double s = saturationEstimate(g, D);
      monotone = monotone && s <= prev;
      prev = s;
    }
    const bool pass = rep.passed() && rep.integralPass && monotone;
    ok = ok && pass;
    detail += fmt("%s/d%d M=%d max moment %.1e%s; ", c.name, c.dim, g.momentOrder(), rep.maxMoment(),
                  pass ? "" : " FAILED");
  }
  report(8, ok, detail + "saturation nonincreasing in D");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  try {
    spacingAndShape();
    syntheticTargets();
    const DoubleIntegratorRun di = doubleIntegratorEndToEnd();
    truncationBoundHolds();
    extensionPreservesRank();
    oracleReferences();
    closedLoop(di);
    kernelMoments();
  } catch (const std::exception& e) {
    std::printf("[FAIL] aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d failing criteria, %.0fs\n", failures ? "FAIL" : "PASS", failures, seconds(t0));
  return failures ? 1 : 0;
}
