#pragma once

#include "quifs/common.hpp"
#include "quifs/kernels.hpp"
#include "quifs/lattice.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace quifs {

namespace detail {

/// psi((x - p)/(h sqrt(D))) for a lattice point at squared distance dist2 and offset diff.
inline double kernelAt(const GeneratingFunction& g, const double* diff, double dist2, double invScale,
                       double* scratch) {
  if (g.family() == KernelFamily::Laguerre) return g.radial(dist2 * invScale * invScale);
  for (int i = 0; i < g.dim(); ++i) scratch[i] = diff[i] * invScale;
  return g.evalRaw(scratch);
}

inline void checkQuery(const LatticeField& field, const GeneratingFunction& g, double shape, const Vector& x) {
  if (field.dim() != g.dim()) throw InputError("interpolate: kernel/field dimension mismatch");
  if (x.size() != field.dim()) throw InputError("interpolate: query dimension mismatch");
  if (!(shape > 0.0)) throw InputError("interpolate: shape must be positive");
  requireFinite(x, "interpolate query");
}

}  // namespace detail

/// Truncated quasi-interpolant: D^{-d/2} sum over |x - m h|_2 <= r0 h of field(m) psi((x - m h)/(h sqrt D)).
/// Summation runs in lexicographic index order with compensation, so results are reproducible bit for bit.
inline Vector truncatedInterpolate(const LatticeField& field, const GeneratingFunction& g, double shape, double r0,
                                   const Vector& x) {
  detail::checkQuery(field, g, shape, x);
  if (!(r0 > 0.0)) throw InputError("interpolate: r0 must be positive");
  const int d = field.dim();
  const int mu = field.valueDim();
  const double h = field.spacing();
  const double invScale = 1.0 / (h * std::sqrt(shape));
  std::vector<CompensatedSum> acc(mu);
  double diff[16];
  double scratch[16];
  visitBall(d, h, field.origin(), x, r0, [&](const Index* m, double dist2) {
    const Index k = field.linear(std::span<const Index>(m, d));
    if (k < 0 || field.flagLinear(k) == kAbsent) {
      throw IncompleteFieldError("stencil touches a lattice point without a value (extension skipped?)");
    }
    for (int i = 0; i < d; ++i) diff[i] = x[i] - (field.origin()[i] + h * static_cast<double>(m[i]));
    const double w = detail::kernelAt(g, diff, dist2, invScale, scratch);
    const double* v = field.rawValue(k);
    for (int j = 0; j < mu; ++j) acc[j].add(v[j] * w);
  });
  const double norm = std::pow(shape, -0.5 * d);
  Vector out(mu);
  for (int j = 0; j < mu; ++j) out[j] = norm * acc[j].value();
  return out;
}

/// Brute-force reference sum over every lattice index within latticeBound steps (inf-norm) of x.
/// Points the field does not store contribute zero.
inline Vector parentInterpolate(const LatticeField& field, const GeneratingFunction& g, double shape, const Vector& x,
                                Index latticeBound) {
  detail::checkQuery(field, g, shape, x);
  const int d = field.dim();
  const int mu = field.valueDim();
  const double h = field.spacing();
  const double invScale = 1.0 / (h * std::sqrt(shape));
  IndexBox box;
  for (int i = 0; i < d; ++i) {
    const Index c = static_cast<Index>(std::floor((x[i] - field.origin()[i]) / h + 0.5));
    box.lo.push_back(std::max(c - latticeBound, field.box().lo[i]));
    box.hi.push_back(std::min(c + latticeBound, field.box().hi[i]));
  }
  std::vector<CompensatedSum> acc(mu);
  double diff[16];
  double scratch[16];
  forEachIndex(box, [&](std::span<const Index> m) {
    const Index k = field.linear(m);
    if (field.flagLinear(k) == kAbsent) return;
    double dist2 = 0.0;
    for (int i = 0; i < d; ++i) {
      diff[i] = x[i] - (field.origin()[i] + h * static_cast<double>(m[i]));
      dist2 += diff[i] * diff[i];
    }
    const double w = detail::kernelAt(g, diff, dist2, invScale, scratch);
    const double* v = field.rawValue(k);
    for (int j = 0; j < mu; ++j) acc[j].add(v[j] * w);
  });
  const double norm = std::pow(shape, -0.5 * d);
  Vector out(mu);
  for (int j = 0; j < mu; ++j) out[j] = norm * acc[j].value();
  return out;
}

/// Truncation term B (sqrt(D) h / Lambda)^{K-d} |u|_u with Lambda = r0 h.
inline double truncationBound(const GeneratingFunction& g, double shape, double r0, double supNorm) {
  return g.truncationConstant() * std::pow(std::sqrt(shape) / r0, g.decayExponent() - g.dim()) * supNorm;
}

/// Same term written with an explicit ball radius Lambda and spacing h.
inline double truncationBoundLambda(const GeneratingFunction& g, double shape, double h, double lambda,
                                    double supNorm) {
  return g.truncationConstant() * std::pow(std::sqrt(shape) * h / lambda, g.decayExponent() - g.dim()) * supNorm;
}

/// Radius (in units of sqrt(D), i.e. of the kernel argument) past which |psi| is negligible.
inline double kernelCutoff(const GeneratingFunction& g) {
  const double peak = std::abs(g(Vector::Zero(g.dim())));
  Vector x = Vector::Zero(g.dim());
  double cutoff = 60.0;
  for (double r = 60.0; r >= 0.0; r -= 0.05) {
    x[0] = r;
    if (std::abs(g(x)) * std::pow(1.0 + r, g.dim() + 1) > 1e-18 * peak) break;
    cutoff = r;
  }
  return cutoff;
}

struct TruncationCalibration {
  double constant = 0.0;  // calibrated B
  double maxRatio = 0.0;  // largest observed tail / (sqrt(D)/r0)^{K-d}
  int trials = 0;
};

/// Calibrates B so that |parent - truncated| <= B (sqrt(D)/r0)^{K-d} |field|_u.
/// For a query x the worst field with |field|_u <= 1 matches the sign of every tail kernel weight,
/// so the worst error is the absolute tail sum T(x, r0). Each trial draws x in the unit cell and
/// takes the exact sup of T(x, r0) (sqrt(D)/r0)^{-(K-d)} over r0 in [1, max(10, 4 sqrt D)]; that sup
/// sits just below one of the lattice distances. Result: max(default B, 2 * worst ratio).
inline TruncationCalibration calibrateTruncation(const GeneratingFunction& g, double shape, int trials,
                                                 std::uint64_t seed = 0x5eed) {
  if (trials < 10) throw InputError("calibrateTruncationConstant: need at least 10 trials");
  if (!(shape > 0.0)) throw InputError("calibrateTruncationConstant: shape must be positive");
  const int d = g.dim();
  const double sd = std::sqrt(shape);
  const double kd = g.decayExponent() - d;
  const double rMax = std::max(10.0, 4.0 * sd);
  const double reach = rMax + kernelCutoff(g) * sd + 1.0;
  const double norm = std::pow(shape, -0.5 * d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TruncationCalibration cal;
  cal.trials = trials;
  Vector x(d);
  Vector y(d);
  std::vector<std::pair<double, double>> terms;
  for (int t = 0; t < trials; ++t) {
    for (int i = 0; i < d; ++i) x[i] = unit(rng);
    terms.clear();
    visitBall(d, 1.0, Vector::Zero(d), x, reach, [&](const Index* m, double dist2) {
      const double dist = std::sqrt(dist2);
      if (dist < 1.0) return;
      for (int i = 0; i < d; ++i) y[i] = (x[i] - static_cast<double>(m[i])) / sd;
      terms.emplace_back(dist, norm * std::abs(g.evalRaw(y.data())));
    });
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    CompensatedSum tail;
    for (size_t k = 0; k < terms.size(); ++k) {
      tail.add(terms[k].second);
      const bool lastOfDistance = k + 1 == terms.size() || terms[k + 1].first < terms[k].first;
      if (!lastOfDistance || terms[k].first > rMax) continue;
      // r0 just below this distance: every point at distance >= terms[k].first is outside the stencil.
      const double ratio = tail.value() / std::pow(sd / terms[k].first, kd);
      cal.maxRatio = std::max(cal.maxRatio, ratio);
    }
  }
  const double fallback = g.decayConstant() / kd;
  cal.constant = std::max(fallback, 2.0 * cal.maxRatio);
  return cal;
}

inline double calibrateTruncationConstant(const GeneratingFunction& g, double shape, int trials,
                                          std::uint64_t seed = 0x5eed) {
  return calibrateTruncation(g, shape, trials, seed).constant;
}

}  // namespace quifs
