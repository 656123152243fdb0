#pragma once

#include "quifs/common.hpp"
#include "quifs/quadrature.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace quifs {

enum class KernelFamily { Laguerre, TrigGauss, Sech, Custom };

/// Generating function psi on R^d with its moment order, decay data and Fourier transform.
/// Laguerre kernels are radial; trig-gauss and sech are tensor products of their 1-D forms.
class GeneratingFunction {
 public:
  using EvalFn = std::function<double(std::span<const double>)>;

  /// psi_{2 m0}(x) = pi^{-d/2} L_{m0-1}^{d/2}(|x|^2) e^{-|x|^2}; moment order 2 m0.
  static GeneratingFunction laguerre(int dim, int m0) {
    if (m0 < 1) throw InputError("laguerre kernel: m0 must be >= 1");
    GeneratingFunction g(m0 == 1 ? "gauss" : "laguerre-m" + std::to_string(m0), dim, KernelFamily::Laguerre,
                         2 * m0);
    g.m0_ = m0;
    // Coefficients of L_n^alpha(t) = sum_k (-1)^k C(n+alpha, n-k) t^k / k!.
    const int n = m0 - 1;
    const double alpha = 0.5 * dim;
    g.poly_.assign(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) {
      double binom = 1.0;
      const int j = n - k;
      for (int i = 1; i <= j; ++i) binom *= (alpha + k + i) / i;
      double fact = 1.0;
      for (int i = 2; i <= k; ++i) fact *= i;
      g.poly_[k] = (k % 2 == 0 ? 1.0 : -1.0) * binom / fact;
    }
    g.scale_ = std::pow(std::numbers::pi, -0.5 * dim);
    g.finish();
    return g;
  }

  /// sqrt(e/pi) e^{-t^2} cos(sqrt(2) t) per axis; moment order 4.
  static GeneratingFunction trigGauss(int dim) {
    GeneratingFunction g("trig-gauss", dim, KernelFamily::TrigGauss, 4);
    g.finish();
    return g;
  }

  /// (1/pi) sech t per axis; moment order 2.
  static GeneratingFunction sech(int dim) {
    GeneratingFunction g("sech", dim, KernelFamily::Sech, 2);
    g.finish();
    return g;
  }

  /// User kernel without a closed-form transform. Saturation estimates are unavailable for it.
  static GeneratingFunction custom(std::string name, int dim, int momentOrder, EvalFn fn) {
    if (!fn) throw InputError("custom kernel: empty evaluator");
    GeneratingFunction g(std::move(name), dim, KernelFamily::Custom, momentOrder);
    g.custom_ = std::make_shared<const EvalFn>(std::move(fn));
    g.finish();
    return g;
  }

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }
  int momentOrder() const { return momentOrder_; }
  double decayExponent() const { return decayExponent_; }
  double decayConstant() const { return decayConstant_; }
  double truncationConstant() const { return truncationConstant_; }
  KernelFamily family() const { return family_; }
  bool hasFourier() const { return family_ != KernelFamily::Custom; }
  bool isTensor() const { return family_ == KernelFamily::TrigGauss || family_ == KernelFamily::Sech; }

  GeneratingFunction withTruncationConstant(double b) const {
    if (!(b > 0.0) || !std::isfinite(b)) throw InputError("truncation constant must be positive");
    GeneratingFunction g = *this;
    g.truncationConstant_ = b;
    return g;
  }

  GeneratingFunction withDecayExponent(double k) const {
    if (!(k > dim_)) throw InputError("decay exponent must exceed the dimension");
    GeneratingFunction g = *this;
    g.decayExponent_ = k;
    g.decayConstant_ = g.measureDecayConstant();
    g.truncationConstant_ = g.decayConstant_ / (k - dim_);
    return g;
  }

  double operator()(const Vector& x) const {
    if (x.size() != dim_) throw InputError("kernel eval: dimension mismatch");
    requireFinite(x, "kernel eval");
    return evalRaw(x.data());
  }

  /// No dimension or finiteness check; x must hold dim() entries.
  double evalRaw(const double* x) const {
    switch (family_) {
      case KernelFamily::Laguerre: {
        double r2 = 0.0;
        for (int i = 0; i < dim_; ++i) r2 += x[i] * x[i];
        return radial(r2);
      }
      case KernelFamily::TrigGauss:
      case KernelFamily::Sech: {
        double p = 1.0;
        for (int i = 0; i < dim_; ++i) p *= axis(x[i]);
        return p;
      }
      case KernelFamily::Custom:
        return (*custom_)(std::span<const double>(x, dim_));
    }
    return 0.0;
  }

  /// Radial profile as a function of |x|^2 (Laguerre family only).
  double radial(double r2) const {
    double p = 0.0;
    for (int k = static_cast<int>(poly_.size()) - 1; k >= 0; --k) p = p * r2 + poly_[k];
    return scale_ * p * std::exp(-r2);
  }

  /// One-dimensional factor of a tensor kernel.
  double axis(double t) const {
    if (family_ == KernelFamily::TrigGauss) {
      return std::sqrt(std::numbers::e / std::numbers::pi) * std::exp(-t * t) * std::cos(std::numbers::sqrt2 * t);
    }
    return 1.0 / (std::numbers::pi * std::cosh(t));
  }

  /// F psi(xi) = int psi(x) e^{-2 pi i <x, xi>} dx (real for every catalog kernel).
  double fourier(const Vector& xi) const {
    if (xi.size() != dim_) throw InputError("kernel fourier: dimension mismatch");
    requireUnsupported();
    if (family_ == KernelFamily::Laguerre) return radialFourier(xi.squaredNorm());
    double p = 1.0;
    for (int i = 0; i < dim_; ++i) p *= axisFourier(xi[i]);
    return p;
  }

  /// Upper bound on |F psi(xi)| over all xi with |xi|_inf >= rho; nonincreasing in rho.
  double fourierEnvelope(double rho) const {
    requireUnsupported();
    rho = std::abs(rho);
    if (family_ == KernelFamily::Laguerre) return radialFourier(rho * rho);
    return std::abs(axisFourier(rho));
  }

  double axisFourier(double t) const {
    const double pt = std::numbers::pi * t;
    if (family_ == KernelFamily::TrigGauss) {
      // Written as a sum of exponentials to avoid cosh overflow at large t.
      const double a = -pt * pt;
      const double b = std::numbers::sqrt2 * std::abs(pt);
      return 0.5 * (std::exp(a + b) + std::exp(a - b));
    }
    const double z = std::numbers::pi * pt;
    return z > 700.0 ? 0.0 : 1.0 / std::cosh(z);
  }

  /// e^{-s} sum_{k < m0} s^k / k! with s = pi^2 |xi|^2.
  double radialFourier(double xi2) const {
    const double s = std::numbers::pi * std::numbers::pi * xi2;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < m0_; ++k) {
      term *= s / k;
      sum += term;
    }
    return std::exp(-s) * sum;
  }

 private:
  GeneratingFunction(std::string name, int dim, KernelFamily family, int momentOrder)
      : name_(std::move(name)), dim_(dim), family_(family), momentOrder_(momentOrder) {
    if (dim < 1) throw InputError("kernel dimension must be positive");
    if (momentOrder < 1) throw InputError("moment order must be positive");
  }

  void requireUnsupported() const {
    if (!hasFourier()) throw UnsupportedKernelError("kernel '" + name_ + "' has no closed-form Fourier transform");
  }

  void finish() {
    decayExponent_ = dim_ + 4.0;
    decayConstant_ = measureDecayConstant();
    truncationConstant_ = decayConstant_ / (decayExponent_ - dim_);
  }

  /// max of (1 + |x|)^K |psi(x)| along sampled rays out to |x| = 20, padded by 5%.
  double measureDecayConstant() const {
    std::vector<Vector> dirs;
    for (int i = 0; i < dim_; ++i) dirs.push_back(Vector::Unit(dim_, i));
    if (dim_ > 1) {
      dirs.push_back(Vector::Ones(dim_).normalized());
      Vector v(dim_);
      for (int i = 0; i < dim_; ++i) v[i] = 1.0 + 0.37 * i;
      dirs.push_back(v.normalized());
      v = Vector::Ones(dim_);
      v[0] = 2.0;
      dirs.push_back(v.normalized());
    }
    if (family_ == KernelFamily::Laguerre) dirs.resize(1);
    double best = 0.0;
    Vector x(dim_);
    for (const Vector& dir : dirs) {
      for (int k = 0; k <= 20000; ++k) {
        const double r = 0.001 * k;
        x = r * dir;
        best = std::max(best, std::pow(1.0 + r, decayExponent_) * std::abs(evalRaw(x.data())));
      }
    }
    return 1.05 * best;
  }

  std::string name_;
  int dim_;
  KernelFamily family_;
  int momentOrder_;
  int m0_ = 0;
  double scale_ = 1.0;
  std::vector<double> poly_;
  std::shared_ptr<const EvalFn> custom_;
  double decayExponent_ = 0.0;
  double decayConstant_ = 0.0;
  double truncationConstant_ = 0.0;
};

inline const std::vector<std::string>& kernelCatalog() {
  static const std::vector<std::string> names = {"gauss", "laguerre-m3", "laguerre-m5", "trig-gauss", "sech"};
  return names;
}

/// Builds a catalog kernel for dimension d. Unknown names are an input error.
inline GeneratingFunction makeKernel(const std::string& name, int dim) {
  if (name == "gauss") return GeneratingFunction::laguerre(dim, 1);
  if (name == "trig-gauss") return GeneratingFunction::trigGauss(dim);
  if (name == "sech") return GeneratingFunction::sech(dim);
  if (name.rfind("laguerre-m", 0) == 0) {
    const std::string tail = name.substr(10);
    if (!tail.empty() && tail.size() < 3 && std::all_of(tail.begin(), tail.end(), ::isdigit)) {
      const int m0 = std::stoi(tail);
      if (m0 >= 1) return GeneratingFunction::laguerre(dim, m0);
    }
  }
  throw InputError("unknown kernel '" + name + "'");
}

/// C_gamma = M Gamma(M) / Gamma(M+2) = 1/(M+1).
inline double cGamma(int momentOrder) {
  if (momentOrder < 1) throw InputError("cGamma: moment order must be >= 1");
  return 1.0 / (momentOrder + 1.0);
}

struct MomentEntry {
  std::vector<int> alpha;
  double value = 0.0;
  bool pass = false;
};

struct MomentReport {
  int order = 0;
  double integral = 0.0;
  bool integralPass = false;
  std::vector<MomentEntry> moments;  // every alpha with 1 <= |alpha| < order

  bool passed() const {
    return integralPass && std::all_of(moments.begin(), moments.end(), [](const MomentEntry& m) { return m.pass; });
  }
  double maxMoment() const {
    double worst = 0.0;
    for (const auto& m : moments) worst = std::max(worst, std::abs(m.value));
    return worst;
  }
};

namespace detail {

inline void multiIndices(int dim, int maxLen, const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> alpha(dim, 0);
  std::function<void(int, int)> rec = [&](int axis, int remaining) {
    if (axis == dim - 1) {
      for (int a = 0; a <= remaining; ++a) {
        alpha[axis] = a;
        visit(alpha);
      }
      alpha[axis] = 0;
      return;
    }
    for (int a = 0; a <= remaining; ++a) {
      alpha[axis] = a;
      rec(axis + 1, remaining - a);
    }
    alpha[axis] = 0;
  };
  rec(0, maxLen);
}

inline quadrature::Rule axisRule(const GeneratingFunction& g) {
  if (g.family() == KernelFamily::Sech) return quadrature::trapezoid(60.0, 1201);
  return quadrature::gaussHermite(80);
}

}  // namespace detail

/// Moments of psi by quadrature. Laguerre kernels use a tensor Gauss-Hermite rule (exact for
/// polynomial times Gaussian); tensor kernels factor into 1-D integrals. Custom kernels fall back to a
/// trapezoid product rule on [-12, 12]^d.
inline MomentReport verifyMoments(const GeneratingFunction& g, double quadTol, double integralTol = 1e-8,
                                  int order = 0) {
  if (!(quadTol > 0.0)) throw InputError("verifyMoments: tolerance must be positive");
  if (order <= 0) order = g.momentOrder();
  const int d = g.dim();
  MomentReport report;
  report.order = order;

  std::vector<std::vector<int>> alphas;
  detail::multiIndices(d, order - 1, [&](const std::vector<int>& a) { alphas.push_back(a); });
  std::vector<double> values(alphas.size(), 0.0);

  if (g.isTensor()) {
    const auto rule = detail::axisRule(g);
    std::vector<double> m1(order, 0.0);
    for (int k = 0; k < order; ++k) {
      CompensatedSum acc;
      for (size_t i = 0; i < rule.nodes.size(); ++i) {
        const double t = rule.nodes[i];
        double w = rule.weights[i];
        if (rule.gaussianWeight) w *= std::exp(t * t);
        acc.add(w * std::pow(t, k) * g.axis(t));
      }
      m1[k] = acc.value();
    }
    for (size_t j = 0; j < alphas.size(); ++j) {
      double p = 1.0;
      for (int a : alphas[j]) p *= m1[a];
      values[j] = p;
    }
  } else {
    quadrature::Rule rule;
    if (g.family() == KernelFamily::Laguerre) {
      rule = quadrature::gaussHermite(d <= 2 ? 24 : 16);
    } else {
      rule = quadrature::trapezoid(12.0, d <= 2 ? 241 : 49);
    }
    std::vector<CompensatedSum> acc(alphas.size());
    std::vector<std::vector<double>> pw(d, std::vector<double>(order, 1.0));
    quadrature::forEachTensorNode(rule, d, [&](std::span<const double> x, double w) {
      const double f = w * g.evalRaw(x.data());
      for (int i = 0; i < d; ++i) {
        for (int k = 1; k < order; ++k) pw[i][k] = pw[i][k - 1] * x[i];
      }
      for (size_t j = 0; j < alphas.size(); ++j) {
        double p = f;
        for (int i = 0; i < d; ++i) p *= pw[i][alphas[j][i]];
        acc[j].add(p);
      }
    });
    for (size_t j = 0; j < alphas.size(); ++j) values[j] = acc[j].value();
  }

  for (size_t j = 0; j < alphas.size(); ++j) {
    int len = 0;
    for (int a : alphas[j]) len += a;
    if (len == 0) {
      report.integral = values[j];
      report.integralPass = std::abs(values[j] - 1.0) <= integralTol;
    } else {
      report.moments.push_back({alphas[j], values[j], std::abs(values[j]) <= quadTol});
    }
  }
  return report;
}

/// F psi(xi) recomputed by quadrature of psi(x) cos(2 pi <x, xi>); an independent check on the closed form.
inline double fourierByQuadrature(const GeneratingFunction& g, const Vector& xi) {
  if (xi.size() != g.dim()) throw InputError("fourierByQuadrature: dimension mismatch");
  const double twoPi = 2.0 * std::numbers::pi;
  if (g.isTensor()) {
    const auto rule = detail::axisRule(g);
    double p = 1.0;
    for (int i = 0; i < g.dim(); ++i) {
      CompensatedSum acc;
      for (size_t k = 0; k < rule.nodes.size(); ++k) {
        const double t = rule.nodes[k];
        double w = rule.weights[k];
        if (rule.gaussianWeight) w *= std::exp(t * t);
        acc.add(w * g.axis(t) * std::cos(twoPi * t * xi[i]));
      }
      p *= acc.value();
    }
    return p;
  }
  const int n = g.dim() <= 2 ? 64 : 24;
  const auto rule = g.family() == KernelFamily::Laguerre ? quadrature::gaussHermite(n)
                                                         : quadrature::trapezoid(12.0, g.dim() <= 2 ? 481 : 49);
  CompensatedSum acc;
  quadrature::forEachTensorNode(rule, g.dim(), [&](std::span<const double> x, double w) {
    double phase = 0.0;
    for (int i = 0; i < g.dim(); ++i) phase += x[i] * xi[i];
    acc.add(w * g.evalRaw(x.data()) * std::cos(twoPi * phase));
  });
  return acc.value();
}

/// Upper bound on the saturation term: sum over nu != 0 of |F psi(sqrt(D) nu)|, explicit for
/// |nu|_inf <= 3 plus a shell-by-shell tail bounded by the Fourier envelope.
inline double saturationEstimate(const GeneratingFunction& g, double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw InputError("saturationEstimate: shape must be positive");
  if (!g.hasFourier()) throw UnsupportedKernelError("kernel '" + g.name() + "' has no closed-form Fourier transform");
  const int d = g.dim();
  const int inner = 3;
  const double sd = std::sqrt(shape);
  CompensatedSum sum;
  std::vector<int> nu(d, -inner);
  Vector xi(d);
  while (true) {
    bool zero = true;
    for (int i = 0; i < d; ++i) {
      xi[i] = sd * nu[i];
      zero = zero && nu[i] == 0;
    }
    if (!zero) sum.add(std::abs(g.fourier(xi)));
    int axis = d - 1;
    while (axis >= 0 && ++nu[axis] > inner) {
      nu[axis] = -inner;
      --axis;
    }
    if (axis < 0) break;
  }
  for (int n = inner + 1; n < 100000; ++n) {
    const double env = g.fourierEnvelope(n * sd);
    const double shell = std::pow(2.0 * n + 1.0, d) - std::pow(2.0 * n - 1.0, d);
    const double term = shell * env;
    sum.add(term);
    if (term <= 1e-300 || term < 1e-20 * sum.value()) break;
  }
  return sum.value();
}

}  // namespace quifs
