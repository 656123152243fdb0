#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quifs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = std::int64_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatch, non-finite input, bad ranges.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A stencil touched a lattice point that carries no value.
class IncompleteFieldError : public Error {
 public:
  using Error::Error;
};

class UnsupportedKernelError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class BudgetInfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Synthesis produced no usable net (empty feasible set or too many solver failures).
class SynthesisError : public Error {
 public:
  using Error::Error;
};

/// Schema violations, checksum mismatches and version skew in files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Axis-aligned box [lower, upper].
struct Box {
  Vector lower;
  Vector upper;

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const Vector& x, double tol = 0.0) const {
    for (int i = 0; i < dim(); ++i) {
      if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
    }
    return true;
  }

  bool empty() const {
    for (int i = 0; i < dim(); ++i) {
      if (lower[i] > upper[i]) return true;
    }
    return false;
  }

  static Box symmetric(const Vector& halfWidth) { return Box{-halfWidth, halfWidth}; }
};

/// Neumaier-compensated accumulator; keeps lattice sums reproducible for a fixed order.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline void requireFinite(const Vector& x, const char* what) {
  if (!x.allFinite()) throw InputError(std::string(what) + ": non-finite entry");
}

}  // namespace quifs
