#pragma once

// Shared numeric primitives and domain types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Mismatched dimensions between arguments.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A tuning parameter (k, t, lambda, ...) outside its admissible range.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A matrix is too close to singular for the requested operation.
struct RankError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data cannot support the computation (too few samples, zero variance, bad cells).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long iterations)
      : std::runtime_error(what + " (after " + std::to_string(iterations) + " iterations)"),
        iterations_(iterations) {}
  long iterations() const noexcept { return iterations_; }

 private:
  long iterations_;
};

// ---------------------------------------------------------------------------
// Domain types

/// n x p sample matrix, rows are observations.
class DataMatrix {
 public:
  explicit DataMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 2) throw DataError("DataMatrix needs at least 2 observations");
    if (values_.cols() < 1) throw DataError("DataMatrix needs at least 1 variable");
    if (!values_.allFinite()) throw DataError("DataMatrix contains non-finite entries");
  }

  const Matrix& values() const noexcept { return values_; }
  Index n() const noexcept { return values_.rows(); }
  Index p() const noexcept { return values_.cols(); }

 private:
  Matrix values_;
};

/// Dense symmetric matrix. Symmetry is exact: the constructor averages the
/// two triangles, so entry (i,j) and (j,i) are the same double.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;

  explicit SymmetricMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) throw ShapeError("SymmetricMatrix requires a square matrix");
    if (!m.allFinite()) throw DomainError("SymmetricMatrix contains non-finite entries");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-8 * scale) throw DomainError("SymmetricMatrix input is not symmetric");
    values_ = m;
    const Index p = m.rows();
    for (Index j = 0; j < p; ++j) {
      for (Index i = j + 1; i < p; ++i) {
        const double v = 0.5 * (m(i, j) + m(j, i));
        values_(i, j) = v;
        values_(j, i) = v;
      }
    }
  }

  static SymmetricMatrix identity(Index p) { return SymmetricMatrix(Matrix::Identity(p, p)); }

  const Matrix& dense() const noexcept { return values_; }
  Index dim() const noexcept { return values_.rows(); }
  double operator()(Index i, Index j) const { return values_(i, j); }

 private:
  Matrix values_;
};

/// Standardized test statistics.
class TestVector {
 public:
  TestVector() = default;
  explicit TestVector(Vector z) : z_(std::move(z)) {
    if (!z_.allFinite()) throw DomainError("TestVector contains non-finite entries");
  }
  const Vector& values() const noexcept { return z_; }
  Index size() const noexcept { return z_.size(); }
  double operator[](Index i) const { return z_[i]; }

 private:
  Vector z_;
};

class PValueVector {
 public:
  PValueVector() = default;
  explicit PValueVector(Vector values) : values_(std::move(values)) {
    for (Index i = 0; i < values_.size(); ++i) {
      if (!(values_[i] >= 0.0 && values_[i] <= 1.0)) throw DomainError("p-value outside [0,1]");
    }
  }
  const Vector& values() const noexcept { return values_; }
  Index size() const noexcept { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }

 private:
  Vector values_;
};

/// Which hypotheses are true nulls, derived from the signal vector mu*.
class HypothesisTruth {
 public:
  HypothesisTruth() = default;
  explicit HypothesisTruth(Vector mu_star) : mu_star_(std::move(mu_star)) {
    is_null_.resize(static_cast<std::size_t>(mu_star_.size()));
    for (Index i = 0; i < mu_star_.size(); ++i) {
      const bool null = mu_star_[i] == 0.0;
      is_null_[static_cast<std::size_t>(i)] = null;
      if (null) ++p0_;
    }
  }

  const Vector& mu_star() const noexcept { return mu_star_; }
  bool is_null(Index i) const { return is_null_[static_cast<std::size_t>(i)]; }
  Index p() const noexcept { return mu_star_.size(); }
  Index p0() const noexcept { return p0_; }
  Index p1() const noexcept { return p() - p0_; }

 private:
  Vector mu_star_;
  std::vector<bool> is_null_;
  Index p0_ = 0;
};

// ---------------------------------------------------------------------------
// Standard normal distribution

inline constexpr double kMinPValue = 1e-300;

/// Phi(x). Error is that of libm's erfc (about one ulp).
inline double std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw DomainError("std_normal_cdf: non-finite argument");
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

inline double std_normal_pdf(double x) {
  return 0.39894228040143267794 * std::exp(-0.5 * x * x);
}

/// Inverse of Phi. Acklam's rational approximation (relative error ~1e-9)
/// followed by one Halley step on the erfc-based CDF.
inline double std_normal_quantile(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("std_normal_quantile: alpha must lie in (0,1)");

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  // Work in the lower half so the tail probability keeps full relative precision.
  const bool upper = alpha > 0.5;
  const double q_tail = upper ? 1.0 - alpha : alpha;

  double x;
  if (q_tail < p_low) {
    const double q = std::sqrt(-2.0 * std::log(q_tail));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = q_tail - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  const double e = 0.5 * std::erfc(-x * 0.70710678118654752440) - q_tail;
  const double u = e * 2.50662827463100050242 * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);

  return upper ? -x : x;
}

// ---------------------------------------------------------------------------
// Small numeric helpers

/// Neumaier-compensated running sum. Order of additions is fixed by the
/// caller, which keeps results reproducible.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// 0/0 = 0 convention used for every proportion in the library.
inline double safe_ratio(double num, double den) noexcept {
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  return num / den;
}

}  // namespace pfa
