#pragma once

#include "quifs/common.hpp"
#include "quifs/kernels.hpp"

#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace quifs {

struct BudgetOptions {
  std::vector<double> ladder{1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0};
  double minShape = 2.0;          // ladder search starts here
  std::optional<double> shape;    // fixed D instead of the ladder
  std::optional<double> radius;   // requested r0; must be at least the certified value
  double maxSpacing = 0.0;        // grid-resolution floor on h; 0 disables it
};

/// (eps, D, h, r0, L0) together with the three error terms of the certificate.
struct ApproximationBudget {
  double epsilon = 0.0;
  double shape = 0.0;
  double h = 0.0;
  double r0 = 0.0;
  double L0 = 0.0;
  double supNorm = 0.0;
  double cGamma = 0.0;
  double saturation = 0.0;  // E0(psi, D)
  double decayExponent = 0.0;
  double truncationConstant = 0.0;
  int dim = 0;
  double interpTerm = 0.0;
  double saturationTerm = 0.0;
  double truncationTerm = 0.0;

  double certifiedBound() const { return interpTerm + saturationTerm + truncationTerm; }

  /// Empty string when every invariant holds; otherwise the first violation.
  std::string violation() const {
    std::ostringstream os;
    const double third = epsilon / 3.0;
    if (!(epsilon > 0.0)) os << "epsilon must be positive";
    else if (!(shape > 0.0) || !(h > 0.0) || !(r0 > 0.0)) os << "shape, spacing and radius must be positive";
    else if (L0 < 0.0 || supNorm < 0.0) os << "L0 and supNorm must be nonnegative";
    else if (interpTerm > third) os << "interpolation term " << interpTerm << " exceeds eps/3";
    else if (saturationTerm > third) os << "saturation term " << saturationTerm << " exceeds eps/3";
    else if (truncationTerm > third) os << "truncation term " << truncationTerm << " exceeds eps/3";
    else if (certifiedBound() > epsilon) os << "certified bound exceeds eps";
    return os.str();
  }
  bool valid() const { return violation().empty(); }
};

inline double certifiedBound(const ApproximationBudget& b) { return b.certifiedBound(); }

namespace detail {

inline void fillTerms(ApproximationBudget& b) {
  b.interpTerm = b.cGamma * b.L0 * b.h * std::sqrt(b.shape);
  b.saturationTerm = b.saturation * b.supNorm;
  b.truncationTerm = b.supNorm == 0.0
                         ? 0.0
                         : b.truncationConstant * std::pow(std::sqrt(b.shape) / b.r0, b.decayExponent - b.dim) *
                               b.supNorm;
}

}  // namespace detail

/// Smallest r0 whose truncation term is at most eps/3 (never below 1).
inline double requiredRadius(const GeneratingFunction& g, double shape, double epsilon, double supNorm) {
  if (supNorm == 0.0) return 1.0;
  const double kd = g.decayExponent() - g.dim();
  const double r0 = std::sqrt(shape) * std::pow(3.0 * g.truncationConstant() * supNorm / epsilon, 1.0 / kd);
  return std::max(1.0, r0 * (1.0 + 1e-9));
}

/// One-shot eps budget: D from the ladder so that E0 * supNorm <= eps/3, then
/// h = eps / (3 C_gamma L0 sqrt D) and r0 = sqrt D (3 B supNorm / eps)^{1/(K-d)}.
inline ApproximationBudget selectBudget(double epsilon, const GeneratingFunction& g, double L0, double supNorm,
                                        const BudgetOptions& opt = {}) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InputError("selectBudget: epsilon must be positive");
  if (!(L0 >= 0.0) || !std::isfinite(L0)) throw InputError("selectBudget: L0 must be finite and >= 0");
  if (!(supNorm >= 0.0) || !std::isfinite(supNorm)) throw InputError("selectBudget: supNorm must be finite and >= 0");
  ApproximationBudget b;
  b.epsilon = epsilon;
  b.L0 = L0;
  b.supNorm = supNorm;
  b.cGamma = cGamma(g.momentOrder());
  b.decayExponent = g.decayExponent();
  b.truncationConstant = g.truncationConstant();
  b.dim = g.dim();
  const double third = epsilon / 3.0;

  if (opt.shape) {
    if (!(*opt.shape > 0.0)) throw InputError("selectBudget: shape override must be positive");
    b.shape = *opt.shape;
    b.saturation = saturationEstimate(g, b.shape);
    if (b.saturation * supNorm > third) {
      throw BudgetInfeasibleError("selectBudget: requested shape leaves a saturation error above eps/3");
    }
  } else {
    bool found = false;
    for (double s : opt.ladder) {
      if (s < opt.minShape) continue;
      const double e0 = saturationEstimate(g, s);
      if (e0 * supNorm <= third) {
        b.shape = s;
        b.saturation = e0;
        found = true;
        break;
      }
    }
    if (!found) throw BudgetInfeasibleError("selectBudget: no shape on the ladder meets the saturation budget");
  }

  const double sd = std::sqrt(b.shape);
  if (L0 > 0.0) {
    b.h = epsilon / (3.0 * b.cGamma * L0 * sd) * (1.0 - 1e-12);
    if (opt.maxSpacing > 0.0) b.h = std::min(b.h, opt.maxSpacing);
  } else {
    if (!(opt.maxSpacing > 0.0)) {
      throw BudgetInfeasibleError("selectBudget: L0 = 0 needs a grid-resolution floor (maxSpacing)");
    }
    b.h = opt.maxSpacing;
  }

  b.r0 = requiredRadius(g, b.shape, epsilon, supNorm);
  if (opt.radius) {
    if (*opt.radius < b.r0) {
      throw BudgetInfeasibleError("selectBudget: requested radius is below the certified truncation radius");
    }
    b.r0 = *opt.radius;
  }
  detail::fillTerms(b);
  if (const std::string v = b.violation(); !v.empty()) throw BudgetInfeasibleError("selectBudget: " + v);
  return b;
}

/// Recomputes r0 and the terms after supNorm grew, keeping D and h.
inline ApproximationBudget rebudgetRadius(const ApproximationBudget& in, const GeneratingFunction& g, double supNorm) {
  ApproximationBudget b = in;
  b.supNorm = supNorm;
  b.r0 = std::max(in.r0, requiredRadius(g, b.shape, b.epsilon, supNorm));
  b.truncationConstant = g.truncationConstant();
  detail::fillTerms(b);
  if (const std::string v = b.violation(); !v.empty()) throw BudgetInfeasibleError("rebudget: " + v);
  return b;
}

}  // namespace quifs
