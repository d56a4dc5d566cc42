#pragma once

#include "pfa/core.hpp"

namespace pfa {

/// Largest admissible squared loading norm is 1 - kDefaultLoadingCap, so a_i <= 10.
inline constexpr double kDefaultLoadingCap = 0.01;

/// Loadings B (p x k) together with the per-row quantities the FDP formulas use:
/// ||b_i||^2 (clamped to [0, 1 - cap]) and a_i = (1 - ||b_i||^2)^(-1/2).
class FactorRepresentation {
 public:
  FactorRepresentation() = default;

  explicit FactorRepresentation(Matrix loadings, double cap = kDefaultLoadingCap)
      : loadings_(std::move(loadings)), cap_(cap) {
    if (!(cap_ > 0.0 && cap_ < 1.0)) throw ParameterError("loading cap must lie in (0,1)");
    if (!loadings_.allFinite()) throw DomainError("loadings contain non-finite entries");
    const Index p = loadings_.rows();
    row_norm_sq_.resize(p);
    a_.resize(p);
    for (Index i = 0; i < p; ++i) {
      const double raw = loadings_.cols() > 0 ? loadings_.row(i).squaredNorm() : 0.0;
      const double clamped = std::clamp(raw, 0.0, 1.0 - cap_);
      row_norm_sq_[i] = clamped;
      a_[i] = 1.0 / std::sqrt(1.0 - clamped);
    }
  }

  /// k = 0: no common factors, every a_i = 1.
  static FactorRepresentation none(Index p) { return FactorRepresentation(Matrix(p, 0)); }

  const Matrix& loadings() const noexcept { return loadings_; }
  const Vector& row_norm_sq() const noexcept { return row_norm_sq_; }
  const Vector& a() const noexcept { return a_; }
  Index p() const noexcept { return loadings_.rows(); }
  Index k() const noexcept { return loadings_.cols(); }
  double cap() const noexcept { return cap_; }

 private:
  Matrix loadings_;
  Vector row_norm_sq_;
  Vector a_;
  double cap_ = kDefaultLoadingCap;
};

}  // namespace pfa
