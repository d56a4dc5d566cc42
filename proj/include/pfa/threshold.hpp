#pragma once

#include "pfa/core.hpp"

#include <string_view>

namespace pfa {

/// Scalar thresholding rules shared by covariance thresholding and the
/// penalized factor estimator.
enum class ThresholdRule { hard, soft, scad };

inline constexpr double kScadShape = 3.7;

inline std::string_view to_string(ThresholdRule r) noexcept {
  switch (r) {
    case ThresholdRule::hard: return "hard";
    case ThresholdRule::soft: return "soft";
    case ThresholdRule::scad: return "scad";
  }
  return "unknown";
}

inline ThresholdRule parse_threshold_rule(std::string_view s) {
  if (s == "hard") return ThresholdRule::hard;
  if (s == "soft") return ThresholdRule::soft;
  if (s == "scad") return ThresholdRule::scad;
  throw ParameterError("unknown thresholding rule '" + std::string(s) + "' (expected hard, soft or scad)");
}

/// s(z) with threshold tau >= 0. All three rules return 0 for |z| <= tau and
/// move z by at most tau otherwise.
inline double apply_threshold(double z, double tau, ThresholdRule rule) noexcept {
  const double az = std::abs(z);
  if (az <= tau) return 0.0;
  const double sgn = z < 0 ? -1.0 : 1.0;
  switch (rule) {
    case ThresholdRule::hard:
      return z;
    case ThresholdRule::soft:
      return sgn * (az - tau);
    case ThresholdRule::scad:
      if (az <= 2.0 * tau) return sgn * (az - tau);
      if (az <= kScadShape * tau) return ((kScadShape - 1.0) * z - sgn * kScadShape * tau) / (kScadShape - 2.0);
      return z;
  }
  return z;
}

/// Penalty value p_lambda(|m|) whose proximal map is apply_threshold. For the
/// hard rule this is the hard-thresholding penalty lambda^2 - (|m| - lambda)^2_-.
inline double penalty_value(double m, double lambda, ThresholdRule rule) noexcept {
  const double am = std::abs(m);
  switch (rule) {
    case ThresholdRule::soft:
      return lambda * am;
    case ThresholdRule::hard: {
      const double d = std::min(am - lambda, 0.0);
      return lambda * lambda - d * d;
    }
    case ThresholdRule::scad: {
      const double a = kScadShape;
      if (am <= lambda) return lambda * am;
      if (am <= a * lambda) return (2.0 * a * lambda * am - am * am - lambda * lambda) / (2.0 * (a - 1.0));
      return 0.5 * (a + 1.0) * lambda * lambda;
    }
  }
  return 0.0;
}

}  // namespace pfa
