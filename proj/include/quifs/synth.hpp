#pragma once

#include "quifs/budget.hpp"
#include "quifs/common.hpp"
#include "quifs/extend.hpp"
#include "quifs/interp.hpp"
#include "quifs/kernels.hpp"
#include "quifs/lattice.hpp"
#include "quifs/mpc.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace quifs {

/// One synthesis stage with its numbers, for the JSON-lines log.
struct SynthesisEvent {
  std::string stage;
  std::vector<std::pair<std::string, double>> values;
  std::string note;
};

struct SynthesisLog {
  std::vector<SynthesisEvent> events;

  void add(std::string stage, std::vector<std::pair<std::string, double>> values, std::string note = {}) {
    events.push_back({std::move(stage), std::move(values), std::move(note)});
  }
  const SynthesisEvent* find(const std::string& stage) const {
    for (auto it = events.rbegin(); it != events.rend(); ++it) {
      if (it->stage == stage) return &*it;
    }
    return nullptr;
  }
};

struct SynthOptions {
  BudgetOptions budget;
  std::optional<double> lipschitz;     // L0 instead of the doubled estimate
  std::optional<Box> box;              // sampling box; default: the state set's bounding box
  std::optional<double> pilotSpacing;  // default: min(8h, smallest box width / 16)
  bool skipExtension = false;          // zero-fill outside the net instead of extending
  int calibrationTrials = 200;
  std::uint64_t calibrationSeed = 0x5eed;
  double maxNonConvergedFraction = 0.01;
  OracleSettings oracle;
  std::uint64_t configHash = 0;
};

/// Frozen explicit feedback: an extended lattice field plus everything needed to evaluate it.
struct ExplicitPolicy {
  LatticeField field;
  std::string kernelName;
  GeneratingFunction kernel;  // carries the calibrated truncation constant
  ApproximationBudget budget;
  Box controlSet;             // clipping target (U)
  std::uint64_t configHash = 0;
  bool extended = true;       // false when the extension was skipped (zero fill)

  int dim() const { return field.dim(); }
  int controlDim() const { return field.valueDim(); }

  /// x lies in a closed lattice cell whose 2^d corners are all sampled net points. Half a cell past the
  /// outermost samples the extension kink dominates and the error bound no longer holds there.
  bool inDomain(const Vector& x) const {
    const int d = dim();
    if (x.size() != d || !x.allFinite() || d > 16) return false;
    const double h = field.spacing();
    Index cand[16][2];
    int count[16];
    for (int i = 0; i < d; ++i) {
      const double s = (x[i] - field.origin()[i]) / h;
      const double r = std::round(s);
      count[i] = 1;
      if (std::abs(s - r) <= 1e-9) {
        // On a lattice line the cell on either side will do.
        cand[i][0] = static_cast<Index>(r);
        cand[i][count[i]++] = static_cast<Index>(r) - 1;
      } else {
        cand[i][0] = static_cast<Index>(std::floor(s));
      }
    }
    MultiIndex base(d), corner(d);
    for (int mask = 0; mask < (1 << d); ++mask) {
      bool ok = true;
      for (int i = 0; i < d && ok; ++i) {
        const int pick = (mask >> i) & 1;
        if (pick >= count[i]) ok = false;
        else base[i] = cand[i][pick];
      }
      if (!ok) continue;
      for (int c = 0; c < (1 << d) && ok; ++c) {
        for (int i = 0; i < d; ++i) corner[i] = base[i] + ((c >> i) & 1);
        ok = field.flag(corner) == kFeasible;
      }
      if (ok) return true;
    }
    return false;
  }

  /// Truncated quasi-interpolant without the domain test or clipping.
  Vector interpolate(const Vector& x) const {
    return truncatedInterpolate(field, kernel, budget.shape, budget.r0, x);
  }
};

/// Explicit control at x, clipped into U; nullopt when x is outside the policy domain.
inline std::optional<Vector> evaluatePolicy(const ExplicitPolicy& pol, const Vector& x) {
  if (!pol.inDomain(x)) return std::nullopt;
  Vector u = pol.interpolate(x);
  return u.cwiseMax(pol.controlSet.lower).cwiseMin(pol.controlSet.upper);
}

using NetSampler = std::function<FeasibleNet(double h, const Box& box)>;

namespace detail {

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void checkNet(const FeasibleNet& net, const char* which, double maxFraction) {
  const Index total = net.samples.size();
  if (total > 0 && static_cast<double>(net.nonConvergedCount) > maxFraction * static_cast<double>(total)) {
    std::ostringstream os;
    os << which << " net: " << net.nonConvergedCount << " of " << total
       << " lattice points did not converge (limit " << maxFraction * 100.0 << "%)";
    throw SynthesisError(os.str());
  }
  if (net.empty()) throw SynthesisError(std::string(which) + " net has no feasible point");
}

inline std::vector<std::pair<std::string, double>> budgetValues(const ApproximationBudget& b) {
  return {{"epsilon", b.epsilon},      {"D", b.shape},
          {"h", b.h},                  {"r0", b.r0},
          {"L0", b.L0},                {"supNorm", b.supNorm},
          {"B", b.truncationConstant}, {"interpTerm", b.interpTerm},
          {"saturationTerm", b.saturationTerm}, {"truncationTerm", b.truncationTerm},
          {"certifiedBound", b.certifiedBound()}};
}

inline LatticeField zeroFill(const FeasibleNet& net, const IndexBox& target) {
  const LatticeField& f = net.samples;
  LatticeField out(f.spacing(), f.origin(), target, f.valueDim());
  const Vector zero = Vector::Zero(f.valueDim());
  forEachIndex(target, [&](std::span<const Index> m) {
    const Index src = f.linear(m);
    if (src >= 0 && f.flagLinear(src) == kFeasible) out.set(m, f.valueLinear(src), kFeasible);
    else out.set(m, zero, kExtended);
  });
  return out;
}

}  // namespace detail

/// Budget, sample, extend and freeze, with sampling delegated to `sample`.
/// Pilot net for supNorm and L0 (doubled finite-difference rank), B calibrated at the chosen D,
/// fine net at h, one restart if the fine net shows a larger rank than the pilot estimate.
inline ExplicitPolicy synthesizeWith(const NetSampler& sample, const Box& box, const Box& controlSet, double epsilon,
                                     const std::string& kernelName, const SynthOptions& opt,
                                     SynthesisLog* log = nullptr) {
  SynthesisLog local;
  SynthesisLog& L = log ? *log : local;
  const auto t0 = std::chrono::steady_clock::now();
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InputError("synthesize: epsilon must be positive");
  if (box.empty()) throw InputError("synthesize: sampling box is empty");
  const int d = box.dim();
  const GeneratingFunction g0 = makeKernel(kernelName, d);
  const double width = (box.upper - box.lower).minCoeff();
  if (!(width > 0.0)) throw InputError("synthesize: sampling box must have positive width on every axis");
  if (opt.lipschitz && !(*opt.lipschitz >= 0.0)) throw InputError("synthesize: Lipschitz override must be >= 0");

  BudgetOptions bo = opt.budget;
  auto rankFrom = [&](const FeasibleNet& net) {
    if (opt.lipschitz) return *opt.lipschitz;
    return estimateLipschitz(net).safetyRank;
  };
  auto budgetFor = [&](const GeneratingFunction& g, double L0, double supNorm) {
    BudgetOptions o = bo;
    if (L0 == 0.0 && !(o.maxSpacing > 0.0)) o.maxSpacing = width / 32.0;
    return selectBudget(epsilon, g, L0, supNorm, o);
  };

  // Sample on the smallest lattice box enclosing the requested one, so the policy domain covers it.
  auto enclose = [&](double h) {
    Box out = box;
    for (int i = 0; i < d; ++i) {
      out.lower[i] = h * std::floor(box.lower[i] / h + 1e-9);
      out.upper[i] = h * std::ceil(box.upper[i] / h - 1e-9);
    }
    return out;
  };

  // Pilot.
  double hp = opt.pilotSpacing.value_or(width / 16.0);
  FeasibleNet pilot = sample(hp, enclose(hp));
  detail::checkNet(pilot, "pilot", opt.maxNonConvergedFraction);
  double supNorm = pilot.samples.supNorm();
  double L0 = rankFrom(pilot);
  L.add("pilot", {{"h", hp}, {"feasible", double(pilot.size())}, {"infeasible", double(pilot.infeasibleCount)},
                  {"nonConverged", double(pilot.nonConvergedCount)}, {"supNorm", supNorm}, {"L0", L0}},
        opt.lipschitz ? "L0 from override" : "L0 = 2 x finite-difference rank");

  ApproximationBudget b = budgetFor(g0, L0, supNorm);
  const TruncationCalibration cal = calibrateTruncation(g0, b.shape, opt.calibrationTrials, opt.calibrationSeed);
  const GeneratingFunction g = g0.withTruncationConstant(cal.constant);
  L.add("calibration", {{"D", b.shape}, {"B", cal.constant}, {"maxRatio", cal.maxRatio}, {"trials", double(cal.trials)}});
  b = budgetFor(g, L0, supNorm);

  if (!opt.pilotSpacing && 8.0 * b.h < hp * (1.0 - 1e-9)) {
    hp = 8.0 * b.h;
    pilot = sample(hp, enclose(hp));
    detail::checkNet(pilot, "pilot", opt.maxNonConvergedFraction);
    supNorm = pilot.samples.supNorm();
    L0 = rankFrom(pilot);
    L.add("pilot", {{"h", hp}, {"feasible", double(pilot.size())}, {"supNorm", supNorm}, {"L0", L0}},
          "resampled at 8h");
    b = budgetFor(g, L0, supNorm);
  }
  L.add("budget", detail::budgetValues(b));

  // Fine net, restarting once if the pilot underestimated the rank.
  FeasibleNet net;
  for (int attempt = 0; attempt < 2; ++attempt) {
    net = sample(b.h, enclose(b.h));
    detail::checkNet(net, "fine", opt.maxNonConvergedFraction);
    double fineRaw = 0.0;
    try {
      fineRaw = estimateLipschitz(net).rawRank;
    } catch (const EstimationError&) {
      fineRaw = 0.0;
    }
    L.add("net", {{"h", b.h}, {"feasible", double(net.size())}, {"infeasible", double(net.infeasibleCount)},
                  {"nonConverged", double(net.nonConvergedCount)}, {"rawRank", fineRaw},
                  {"supNorm", net.samples.supNorm()}});
    if (opt.lipschitz || fineRaw <= L0 || attempt == 1) break;
    L0 = 2.0 * fineRaw;
    b = budgetFor(g, L0, std::max(supNorm, net.samples.supNorm()));
    L.add("restart", detail::budgetValues(b), "fine-net rank exceeds the pilot estimate");
  }
  if (net.samples.supNorm() > b.supNorm) {
    b = rebudgetRadius(b, g, net.samples.supNorm());
    L.add("rebudget", detail::budgetValues(b), "fine-net supNorm exceeds the pilot value");
  }

  const IndexBox target = extensionTarget(net, b.r0);
  ExplicitPolicy pol{opt.skipExtension ? detail::zeroFill(net, target) : lipschitzExtend(net, b.L0, target),
                     kernelName, g, b, controlSet, opt.configHash, !opt.skipExtension};
  L.add("extend", {{"points", double(pol.field.size())}, {"extended", double(pol.field.countFlag(kExtended))}},
        opt.skipExtension ? "extension skipped, zero fill" : "Lipschitz extension");
  L.add("done", {{"seconds", detail::elapsed(t0)}, {"certifiedBound", b.certifiedBound()}});
  return pol;
}

/// Pointwise sampler over [box] for function targets: nullopt marks an infeasible point.
inline ExplicitPolicy synthesizeFromSampler(const std::function<std::optional<Vector>(const Vector&)>& target,
                                            int valueDim, const Box& box, const Box& valueBox, double epsilon,
                                            const std::string& kernelName, const SynthOptions& opt = {},
                                            SynthesisLog* log = nullptr) {
  NetSampler sampler = [&](double h, const Box& b) {
    const Vector origin = Vector::Zero(b.dim());
    const IndexBox ib = IndexBox::covering(b, h, origin);
    if (ib.empty()) throw SynthesisError("sampling box holds no lattice point");
    FeasibleNet net;
    net.samples = LatticeField(h, origin, ib, valueDim);
    for (Index k = 0; k < ib.count(); ++k) {
      const std::optional<Vector> v = target(net.samples.point(net.samples.unlinear(k)));
      if (v) net.samples.setLinear(k, *v, kFeasible);
      else ++net.infeasibleCount;
    }
    return net;
  };
  return synthesizeWith(sampler, box, valueBox, epsilon, kernelName, opt, log);
}

/// Axis-aligned bounding box of a polytope whose rows each touch a single coordinate.
inline std::optional<Box> boxOf(const Polytope& P) {
  const int d = P.dim();
  Box b{Vector::Constant(d, -std::numeric_limits<double>::infinity()),
        Vector::Constant(d, std::numeric_limits<double>::infinity())};
  for (int r = 0; r < P.rows(); ++r) {
    int axis = -1;
    for (int i = 0; i < d; ++i) {
      if (P.H(r, i) == 0.0) continue;
      if (axis >= 0) return std::nullopt;
      axis = i;
    }
    if (axis < 0) continue;
    const double bound = P.g[r] / P.H(r, axis);
    if (P.H(r, axis) > 0.0) b.upper[axis] = std::min(b.upper[axis], bound);
    else b.lower[axis] = std::max(b.lower[axis], bound);
  }
  if (!b.lower.allFinite() || !b.upper.allFinite()) return std::nullopt;
  return b;
}

/// Algorithm: pilot, budget, fine net through the MPC oracle, extension, freeze.
/// The approximation-ready problem uses V = [-eps, eps]^m, so p.epsilon is overwritten.
inline ExplicitPolicy synthesize(const MpcProblem& problem, double epsilon, const std::string& kernelName,
                                 const SynthOptions& opt = {}, SynthesisLog* log = nullptr) {
  MpcProblem p = problem;
  p.epsilon = epsilon;
  p.validate();
  std::optional<Box> box = opt.box ? opt.box : boxOf(p.stateSet);
  if (!box) throw InputError("synthesize: state set is not a box; give a sampling box");
  if (box->dim() != p.dim) throw InputError("synthesize: sampling box dimension mismatch");
  SynthesisLog local;
  SynthesisLog& L = log ? *log : local;
  NetSampler sampler = [&](double h, const Box& b) {
    const auto t0 = std::chrono::steady_clock::now();
    FeasibleNet net = sampleNet(p, h, b, opt.oracle);
    L.add("sample", {{"h", h}, {"points", double(net.samples.size())}, {"seconds", detail::elapsed(t0)}});
    return net;
  };
  return synthesizeWith(sampler, *box, p.controlSet, epsilon, kernelName, opt, &L);
}

struct CertifyOptions {
  int gridDiv = 3;       // validation spacing h / gridDiv
  int offsetDiv = 7;     // grid offset h / offsetDiv
  Index maxPoints = 0;   // deterministic subsample of the in-domain grid; 0 keeps all
  std::uint64_t seed = 0xce271f;
};

struct CertificationReport {
  double epsilon = 0.0;
  Index gridPoints = 0;
  Index inDomain = 0;
  Index checked = 0;
  Index skipped = 0;  // truth unavailable (oracle infeasible or not converged)
  double maxError = 0.0;
  Vector worstPoint;

  bool passed() const { return checked > 0 && maxError <= epsilon; }
};

/// Off-lattice check of |truth(x) - policy(x)|_inf <= eps on the grid lo h - h/2 + h/offsetDiv + k h/gridDiv
/// covering the policy domain. `truth` returns nullopt where it has no value; such points are skipped.
inline CertificationReport certify(const ExplicitPolicy& pol,
                                   const std::function<std::optional<Vector>(const Vector&)>& truth,
                                   const CertifyOptions& opt = {}) {
  if (opt.gridDiv < 1 || opt.offsetDiv < 1) throw InputError("certify: grid divisors must be positive");
  const int d = pol.dim();
  const double h = pol.field.spacing();
  FeasibleNet view;
  view.samples = pol.field;
  const IndexBox nb = netBoundingBox(view);
  std::vector<std::vector<double>> axes(d);
  for (int i = 0; i < d; ++i) {
    const double first = pol.field.origin()[i] + h * (static_cast<double>(nb.lo[i]) - 0.5) + h / opt.offsetDiv;
    const double last = pol.field.origin()[i] + h * (static_cast<double>(nb.hi[i]) + 0.5);
    for (Index k = 0;; ++k) {
      const double x = first + static_cast<double>(k) * h / opt.gridDiv;
      if (x > last) break;
      axes[i].push_back(x);
    }
  }
  CertificationReport rep;
  rep.epsilon = pol.budget.epsilon;
  std::vector<Vector> pts;
  IndexBox grid;
  for (int i = 0; i < d; ++i) {
    grid.lo.push_back(0);
    grid.hi.push_back(static_cast<Index>(axes[i].size()) - 1);
  }
  Vector x(d);
  forEachIndex(grid, [&](std::span<const Index> k) {
    ++rep.gridPoints;
    for (int i = 0; i < d; ++i) x[i] = axes[i][k[i]];
    if (pol.inDomain(x)) pts.push_back(x);
  });
  rep.inDomain = static_cast<Index>(pts.size());
  if (opt.maxPoints > 0 && rep.inDomain > opt.maxPoints) {
    // Partial Fisher-Yates on raw engine output, then back to grid order.
    std::mt19937_64 rng(opt.seed);
    std::vector<Index> idx(pts.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i);
    for (Index i = 0; i < opt.maxPoints; ++i) {
      const Index j = i + static_cast<Index>(rng() % static_cast<std::uint64_t>(rep.inDomain - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(opt.maxPoints);
    std::sort(idx.begin(), idx.end());
    std::vector<Vector> kept;
    kept.reserve(idx.size());
    for (Index i : idx) kept.push_back(pts[i]);
    pts = std::move(kept);
  }
  for (const Vector& p : pts) {
    const std::optional<Vector> t = truth(p);
    if (!t) {
      ++rep.skipped;
      continue;
    }
    ++rep.checked;
    const Vector u = *evaluatePolicy(pol, p);
    const double err = (*t - u).lpNorm<Eigen::Infinity>();
    if (err > rep.maxError || rep.worstPoint.size() == 0) {
      rep.maxError = std::max(rep.maxError, err);
      rep.worstPoint = p;
    }
  }
  return rep;
}

/// Oracle-backed truth for certify: first optimal control of the approximation-ready problem.
inline std::function<std::optional<Vector>(const Vector&)> oracleTruth(MpcOracle& oracle) {
  return [&oracle](const Vector& x) -> std::optional<Vector> {
    const OracleResult r = oracle.solve(x);
    if (!r.feasible()) return std::nullopt;
    return r.firstControl;
  };
}

}  // namespace quifs
