#pragma once

#include "quifs/common.hpp"
#include "quifs/lattice.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace quifs {

/// Sampled feedback on the h-net: feasible points carry kFeasible, holes stay absent.
struct FeasibleNet {
  LatticeField samples;
  Index infeasibleCount = 0;
  Index nonConvergedCount = 0;

  Index size() const { return samples.countFlag(kFeasible); }
  bool empty() const { return size() == 0; }
};

struct LipschitzEstimate {
  double rawRank = 0.0;
  double safetyRank = 0.0;  // always 2 * rawRank
  std::string method = "finite-difference";
  Index pointsUsed = 0;
};

/// Largest Euclidean norm of the finite-difference gradient of any control component.
/// Central differences where both axis neighbours are feasible, one-sided where only one is;
/// a point with no feasible neighbour along some axis is skipped.
inline LipschitzEstimate estimateLipschitz(const FeasibleNet& net) {
  const LatticeField& f = net.samples;
  const int d = f.dim();
  const int mu = f.valueDim();
  const double h = f.spacing();
  if (net.size() < 2) throw EstimationError("Lipschitz estimate needs at least two feasible points");
  LipschitzEstimate est;
  std::vector<double> grad2(mu);
  MultiIndex nb(d);
  for (Index k = 0; k < f.size(); ++k) {
    if (f.flagLinear(k) != kFeasible) continue;
    const MultiIndex m = f.unlinear(k);
    std::fill(grad2.begin(), grad2.end(), 0.0);
    bool usable = true;
    for (int i = 0; i < d && usable; ++i) {
      nb = m;
      nb[i] = m[i] + 1;
      const Index kp = f.linear(nb);
      nb[i] = m[i] - 1;
      const Index km = f.linear(nb);
      const bool hasP = kp >= 0 && f.flagLinear(kp) == kFeasible;
      const bool hasM = km >= 0 && f.flagLinear(km) == kFeasible;
      if (!hasP && !hasM) {
        usable = false;
        break;
      }
      for (int j = 0; j < mu; ++j) {
        double g;
        if (hasP && hasM) {
          g = (f.rawValue(kp)[j] - f.rawValue(km)[j]) / (2.0 * h);
        } else if (hasP) {
          g = (f.rawValue(kp)[j] - f.rawValue(k)[j]) / h;
        } else {
          g = (f.rawValue(k)[j] - f.rawValue(km)[j]) / h;
        }
        grad2[j] += g * g;
      }
    }
    if (!usable) continue;
    ++est.pointsUsed;
    for (int j = 0; j < mu; ++j) est.rawRank = std::max(est.rawRank, std::sqrt(grad2[j]));
  }
  if (est.pointsUsed == 0) throw EstimationError("degenerate net: no point has a neighbour along every axis");
  est.safetyRank = 2.0 * est.rawRank;
  return est;
}

/// Index box of the feasible points.
inline IndexBox netBoundingBox(const FeasibleNet& net) {
  const LatticeField& f = net.samples;
  IndexBox b;
  b.lo.assign(f.dim(), std::numeric_limits<Index>::max());
  b.hi.assign(f.dim(), std::numeric_limits<Index>::min());
  for (Index k = 0; k < f.size(); ++k) {
    if (f.flagLinear(k) != kFeasible) continue;
    const MultiIndex m = f.unlinear(k);
    for (int i = 0; i < f.dim(); ++i) {
      b.lo[i] = std::min(b.lo[i], m[i]);
      b.hi[i] = std::max(b.hi[i], m[i]);
    }
  }
  return b;
}

/// Every lattice index a stencil of radius r0 centred in the net's bounding box can touch.
inline IndexBox extensionTarget(const FeasibleNet& net, double r0) {
  return netBoundingBox(net).dilated(static_cast<Index>(std::ceil(r0)) + 1);
}

/// Inf-convolution extension mu_E(x) = min_y (mu(y) + L0 |x - y|_2), componentwise, over the target box.
/// Net points keep their stored value bit for bit and stay flagged kFeasible; new points get kExtended.
/// The minimum is exact: net points are grouped into lattice blocks and a block is skipped only when
/// its smallest value plus L0 times the distance to the block's box already exceeds the incumbent.
inline LatticeField lipschitzExtend(const FeasibleNet& net, double L0, const IndexBox& target) {
  const LatticeField& f = net.samples;
  const int d = f.dim();
  const int mu = f.valueDim();
  if (!(L0 >= 0.0) || !std::isfinite(L0)) throw InputError("lipschitzExtend: L0 must be finite and >= 0");
  if (target.dim() != d) throw InputError("lipschitzExtend: target dimension mismatch");
  if (net.empty()) throw SynthesisError("lipschitzExtend: empty net");

  struct Block {
    Vector lower, upper;
    std::vector<double> minValue;
    std::vector<Index> points;  // positions into pts / vals
  };
  const Index side = d <= 2 ? 8 : 4;
  const IndexBox nb = netBoundingBox(net);
  std::vector<Index> blocksPerAxis(d);
  Index blockCount = 1;
  for (int i = 0; i < d; ++i) {
    blocksPerAxis[i] = (nb.extent(i) + side - 1) / side;
    blockCount *= blocksPerAxis[i];
  }
  std::vector<Block> blocks(blockCount);
  std::vector<double> pts;   // d per point
  std::vector<double> vals;  // mu per point
  for (Index k = 0; k < f.size(); ++k) {
    if (f.flagLinear(k) != kFeasible) continue;
    const MultiIndex m = f.unlinear(k);
    Index b = 0;
    for (int i = 0; i < d; ++i) b = b * blocksPerAxis[i] + (m[i] - nb.lo[i]) / side;
    const Vector p = f.point(m);
    const Index id = static_cast<Index>(vals.size()) / mu;
    for (int i = 0; i < d; ++i) pts.push_back(p[i]);
    for (int j = 0; j < mu; ++j) vals.push_back(f.rawValue(k)[j]);
    Block& blk = blocks[b];
    if (blk.points.empty()) {
      blk.lower = p;
      blk.upper = p;
      blk.minValue.assign(f.rawValue(k), f.rawValue(k) + mu);
    } else {
      blk.lower = blk.lower.cwiseMin(p);
      blk.upper = blk.upper.cwiseMax(p);
      for (int j = 0; j < mu; ++j) blk.minValue[j] = std::min(blk.minValue[j], f.rawValue(k)[j]);
    }
    blk.points.push_back(id);
  }
  blocks.erase(std::remove_if(blocks.begin(), blocks.end(), [](const Block& b) { return b.points.empty(); }),
               blocks.end());

  LatticeField out(f.spacing(), f.origin(), target, mu);
  std::vector<double> boxDist(blocks.size());
  Vector value(mu);
  forEachIndex(target, [&](std::span<const Index> m) {
    const Index src = f.linear(m);
    if (src >= 0 && f.flagLinear(src) == kFeasible) {
      out.set(m, f.valueLinear(src), kFeasible);
      return;
    }
    const Vector x = f.point(m);
    for (size_t b = 0; b < blocks.size(); ++b) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) {
        const double gap = std::max({blocks[b].lower[i] - x[i], x[i] - blocks[b].upper[i], 0.0});
        s += gap * gap;
      }
      boxDist[b] = std::sqrt(s);
    }
    for (int j = 0; j < mu; ++j) {
      size_t first = 0;
      double firstBound = std::numeric_limits<double>::infinity();
      for (size_t b = 0; b < blocks.size(); ++b) {
        const double lb = blocks[b].minValue[j] + L0 * boxDist[b];
        if (lb < firstBound) {
          firstBound = lb;
          first = b;
        }
      }
      double best = std::numeric_limits<double>::infinity();
      auto scan = [&](const Block& blk) {
        for (Index id : blk.points) {
          double s = 0.0;
          for (int i = 0; i < d; ++i) {
            const double diff = x[i] - pts[id * d + i];
            s += diff * diff;
          }
          best = std::min(best, vals[id * mu + j] + L0 * std::sqrt(s));
        }
      };
      scan(blocks[first]);
      for (size_t b = 0; b < blocks.size(); ++b) {
        if (b == first) continue;
        if (blocks[b].minValue[j] + L0 * boxDist[b] > best) continue;
        scan(blocks[b]);
      }
      value[j] = best;
    }
    out.set(m, value, kExtended);
  });
  return out;
}

/// Brute-force reference for tests: the same infimum over every net point.
inline Vector lipschitzExtendAt(const FeasibleNet& net, double L0, const Vector& x) {
  const LatticeField& f = net.samples;
  Vector best = Vector::Constant(f.valueDim(), std::numeric_limits<double>::infinity());
  for (Index k = 0; k < f.size(); ++k) {
    if (f.flagLinear(k) != kFeasible) continue;
    const double dist = (x - f.point(f.unlinear(k))).norm();
    for (int j = 0; j < f.valueDim(); ++j) best[j] = std::min(best[j], f.rawValue(k)[j] + L0 * dist);
  }
  return best;
}

}  // namespace quifs
