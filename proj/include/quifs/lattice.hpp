#pragma once

#include "quifs/common.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

namespace quifs {

using MultiIndex = std::vector<Index>;

/// Inclusive integer box lo..hi per axis.
struct IndexBox {
  MultiIndex lo;
  MultiIndex hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool empty() const {
    for (int i = 0; i < dim(); ++i) {
      if (lo[i] > hi[i]) return true;
    }
    return dim() == 0;
  }
  Index extent(int axis) const { return hi[axis] - lo[axis] + 1; }
  Index count() const {
    if (empty()) return 0;
    Index n = 1;
    for (int i = 0; i < dim(); ++i) n *= extent(i);
    return n;
  }
  bool contains(std::span<const Index> m) const {
    for (int i = 0; i < dim(); ++i) {
      if (m[i] < lo[i] || m[i] > hi[i]) return false;
    }
    return true;
  }
  IndexBox dilated(Index k) const {
    IndexBox b = *this;
    for (int i = 0; i < dim(); ++i) {
      b.lo[i] -= k;
      b.hi[i] += k;
    }
    return b;
  }
  bool operator==(const IndexBox&) const = default;

  /// Lattice indices m with lower <= origin + m h <= upper.
  static IndexBox covering(const Box& box, double h, const Vector& origin) {
    IndexBox b;
    for (int i = 0; i < box.dim(); ++i) {
      const double eps = 1e-9;
      b.lo.push_back(static_cast<Index>(std::ceil((box.lower[i] - origin[i]) / h - eps)));
      b.hi.push_back(static_cast<Index>(std::floor((box.upper[i] - origin[i]) / h + eps)));
    }
    return b;
  }
};

/// Visits every index of the box in lexicographic order (last axis fastest).
inline void forEachIndex(const IndexBox& box, const std::function<void(std::span<const Index>)>& visit) {
  if (box.empty()) return;
  MultiIndex m = box.lo;
  const int d = box.dim();
  while (true) {
    visit(m);
    int axis = d - 1;
    while (axis >= 0 && ++m[axis] > box.hi[axis]) {
      m[axis] = box.lo[axis];
      --axis;
    }
    if (axis < 0) break;
  }
}

enum PointFlag : std::uint8_t { kAbsent = 0, kFeasible = 1, kExtended = 2 };

/// Vector-valued samples on the lattice origin + h Z^d, stored densely over an index box.
/// Points whose flag is kAbsent carry no value.
class LatticeField {
 public:
  LatticeField() = default;
  LatticeField(double h, Vector origin, IndexBox box, int valueDim)
      : h_(h), origin_(std::move(origin)), box_(std::move(box)), valueDim_(valueDim) {
    if (!(h_ > 0.0) || !std::isfinite(h_)) throw InputError("lattice spacing must be positive");
    if (origin_.size() != box_.dim()) throw InputError("lattice origin/box dimension mismatch");
    if (valueDim_ < 1) throw InputError("lattice value dimension must be positive");
    requireFinite(origin_, "lattice origin");
    const Index n = box_.count();
    values_.assign(static_cast<size_t>(n) * valueDim_, 0.0);
    flags_.assign(static_cast<size_t>(n), kAbsent);
  }

  int dim() const { return box_.dim(); }
  int valueDim() const { return valueDim_; }
  double spacing() const { return h_; }
  const Vector& origin() const { return origin_; }
  const IndexBox& box() const { return box_; }
  Index size() const { return static_cast<Index>(flags_.size()); }

  /// Row-major position of m (last axis fastest); -1 if outside the box.
  Index linear(std::span<const Index> m) const {
    Index k = 0;
    for (int i = 0; i < dim(); ++i) {
      if (m[i] < box_.lo[i] || m[i] > box_.hi[i]) return -1;
      k = k * box_.extent(i) + (m[i] - box_.lo[i]);
    }
    return k;
  }

  MultiIndex unlinear(Index k) const {
    MultiIndex m(dim());
    for (int i = dim() - 1; i >= 0; --i) {
      const Index e = box_.extent(i);
      m[i] = box_.lo[i] + k % e;
      k /= e;
    }
    return m;
  }

  Vector point(std::span<const Index> m) const {
    Vector x(dim());
    for (int i = 0; i < dim(); ++i) x[i] = origin_[i] + h_ * static_cast<double>(m[i]);
    return x;
  }

  std::uint8_t flag(std::span<const Index> m) const {
    const Index k = linear(m);
    return k < 0 ? static_cast<std::uint8_t>(kAbsent) : flags_[k];
  }
  bool has(std::span<const Index> m) const { return flag(m) != kAbsent; }

  void set(std::span<const Index> m, const Vector& value, std::uint8_t flag = kFeasible) {
    const Index k = linear(m);
    if (k < 0) throw InputError("lattice index outside the bounding box");
    setLinear(k, value, flag);
  }

  void setLinear(Index k, const Vector& value, std::uint8_t flag = kFeasible) {
    if (value.size() != valueDim_) throw InputError("lattice value dimension mismatch");
    requireFinite(value, "lattice value");
    for (int j = 0; j < valueDim_; ++j) values_[static_cast<size_t>(k) * valueDim_ + j] = value[j];
    flags_[k] = flag;
  }

  void clear(std::span<const Index> m) {
    const Index k = linear(m);
    if (k < 0) return;
    flags_[k] = kAbsent;
    for (int j = 0; j < valueDim_; ++j) values_[static_cast<size_t>(k) * valueDim_ + j] = 0.0;
  }

  Vector value(std::span<const Index> m) const {
    const Index k = linear(m);
    if (k < 0 || flags_[k] == kAbsent) throw IncompleteFieldError("lattice point has no value");
    return valueLinear(k);
  }

  Vector valueLinear(Index k) const {
    return Eigen::Map<const Vector>(values_.data() + static_cast<size_t>(k) * valueDim_, valueDim_);
  }
  const double* rawValue(Index k) const { return values_.data() + static_cast<size_t>(k) * valueDim_; }
  std::uint8_t flagLinear(Index k) const { return flags_[k]; }

  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint8_t>& flags() const { return flags_; }

  Index countFlag(std::uint8_t f) const { return std::count(flags_.begin(), flags_.end(), f); }

  /// max over stored points of |value|_inf.
  double supNorm() const {
    double s = 0.0;
    for (Index k = 0; k < size(); ++k) {
      if (flags_[k] == kAbsent) continue;
      for (int j = 0; j < valueDim_; ++j) s = std::max(s, std::abs(rawValue(k)[j]));
    }
    return s;
  }

  /// Copy onto a larger box; points outside the old box start absent.
  LatticeField reboxed(const IndexBox& box) const {
    LatticeField out(h_, origin_, box, valueDim_);
    forEachIndex(box_, [&](std::span<const Index> m) {
      const Index k = linear(m);
      if (flags_[k] == kAbsent) return;
      const Index j = out.linear(m);
      if (j >= 0) out.setLinear(j, valueLinear(k), flags_[k]);
    });
    return out;
  }

  /// Nearest lattice index to x (ties rounded up).
  MultiIndex nearest(const Vector& x) const {
    MultiIndex m(dim());
    for (int i = 0; i < dim(); ++i) m[i] = static_cast<Index>(std::floor((x[i] - origin_[i]) / h_ + 0.5));
    return m;
  }

 private:
  double h_ = 1.0;
  Vector origin_;
  IndexBox box_;
  int valueDim_ = 1;
  std::vector<double> values_;
  std::vector<std::uint8_t> flags_;
};

namespace detail {

template <class F>
void ballAxis(int axis, int dim, double h, const double* origin, const double* x, double radius2, double partial,
              Index* m, F& f) {
  const double c = (x[axis] - origin[axis]) / h;
  const double room = std::sqrt(std::max(0.0, radius2 - partial)) / h;
  const Index lo = static_cast<Index>(std::floor(c - room)) - 1;
  const Index hi = static_cast<Index>(std::ceil(c + room)) + 1;
  for (Index k = lo; k <= hi; ++k) {
    const double diff = x[axis] - (origin[axis] + h * static_cast<double>(k));
    const double d2 = partial + diff * diff;
    if (d2 > radius2) continue;
    m[axis] = k;
    if (axis + 1 == dim) {
      f(static_cast<const Index*>(m), d2);
    } else {
      ballAxis(axis + 1, dim, h, origin, x, radius2, d2, m, f);
    }
  }
}

}  // namespace detail

/// Calls f(m, |x - p_m|^2) for every lattice index m with |x - (origin + m h)|_2 <= r0 h,
/// in lexicographic order. The squared distance accumulates axis by axis, so membership is
/// decided by exactly the sum the caller would compute.
template <class F>
void visitBall(int dim, double h, const Vector& origin, const Vector& x, double r0, F&& f) {
  const double radius = r0 * h;
  MultiIndex m(dim);
  detail::ballAxis(0, dim, h, origin.data(), x.data(), radius * radius, 0.0, m.data(), f);
}

inline void forEachStencilPoint(int dim, double h, const Vector& origin, const Vector& x, double r0,
                                const std::function<void(std::span<const Index>)>& visit) {
  visitBall(dim, h, origin, x, r0, [&](const Index* m, double) { visit(std::span<const Index>(m, dim)); });
}

struct Stencil {
  Vector center;
  double radius = 0.0;
  std::vector<MultiIndex> members;
};

inline Stencil makeStencil(int dim, double h, const Vector& origin, const Vector& x, double r0) {
  Stencil s{x, r0, {}};
  forEachStencilPoint(dim, h, origin, x, r0,
                      [&](std::span<const Index> m) { s.members.emplace_back(m.begin(), m.end()); });
  return s;
}

}  // namespace quifs
