#pragma once

// Multiple-testing core: p-values, rejection counts, estimation of the
// realized factors W, FDP estimators and the dependence-adjusted statistics.

#include "pfa/core.hpp"
#include "pfa/factor.hpp"
#include "pfa/spectral.hpp"
#include "pfa/threshold.hpp"

#include <Eigen/Cholesky>

#include <optional>

namespace pfa {

// ---------------------------------------------------------------------------
// P-values and rejections

inline PValueVector pvalues(const TestVector& z) {
  Vector p(z.size());
  for (Index j = 0; j < z.size(); ++j) {
    p[j] = std::clamp(2.0 * std_normal_cdf(-std::abs(z[j])), kMinPValue, 1.0);
  }
  return PValueVector(std::move(p));
}

struct RejectionCounts {
  Index R = 0;
  std::optional<Index> V_true;
};

inline void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) throw ParameterError("threshold t must lie in (0,1), got " + std::to_string(t));
}

inline RejectionCounts rejection_counts(const PValueVector& p, double t, const HypothesisTruth* truth = nullptr) {
  check_threshold(t);
  if (truth && truth->p() != p.size()) throw ShapeError("rejection_counts: truth and p-values differ in length");
  RejectionCounts out;
  Index v = 0;
  for (Index j = 0; j < p.size(); ++j) {
    if (p[j] <= t) {
      ++out.R;
      if (truth && truth->is_null(j)) ++v;
    }
  }
  if (truth) out.V_true = v;
  return out;
}

// ---------------------------------------------------------------------------
// Realized factors

enum class FactorMethod { least_squares, lad, penalized };

inline std::string_view to_string(FactorMethod m) noexcept {
  switch (m) {
    case FactorMethod::least_squares: return "least_squares";
    case FactorMethod::lad: return "lad";
    case FactorMethod::penalized: return "penalized";
  }
  return "unknown";
}

struct FactorRealization {
  Vector w;
  FactorMethod method = FactorMethod::least_squares;
  int iterations = 0;
  bool converged = true;
};

inline constexpr int kLadMaxIterations = 100;
inline constexpr double kLadTolerance = 1e-8;
inline constexpr double kLadWeightFloor = 1e-6;
inline constexpr int kPenalizedMaxIterations = 200;

inline double default_penalty_level(Index p) { return std::sqrt(2.0 * std::log(static_cast<double>(p))); }

namespace detail {

inline void check_shapes(const FactorRepresentation& fr, const TestVector& z) {
  if (fr.p() != z.size()) {
    throw ShapeError("loadings have " + std::to_string(fr.p()) + " rows but the test vector has " +
                     std::to_string(z.size()) + " entries");
  }
}

/// Solve (B^T D B) w = B^T D y for a small k x k system after a conditioning check.
inline Vector weighted_ls(const Matrix& b, const Vector& y, const Vector* weights) {
  const Index k = b.cols();
  Matrix g(k, k);
  Vector rhs(k);
  if (weights) {
    const Matrix bw = weights->asDiagonal() * b;
    g.noalias() = b.transpose() * bw;
    rhs.noalias() = bw.transpose() * y;
  } else {
    g.noalias() = b.transpose() * b;
    rhs.noalias() = b.transpose() * y;
  }
  const Vector ev = sym_eigenvalues(SymmetricMatrix(Matrix(0.5 * (g + g.transpose()))));
  const double lmax = ev[0];
  const double lmin = ev[k - 1];
  if (!(lmin > 0.0) || lmax / lmin > 1e12) {
    throw RankError("normal equations are singular or ill-conditioned (condition number > 1e12)");
  }
  return g.ldlt().solve(rhs);
}

inline double lad_objective(const Matrix& b, const Vector& z, const Vector& w) {
  return (z - b * w).cwiseAbs().sum();
}

}  // namespace detail

/// W = (B^T B)^{-1} B^T Z.
inline FactorRealization estimate_w_least_squares(const FactorRepresentation& fr, const TestVector& z) {
  detail::check_shapes(fr, z);
  FactorRealization out;
  out.method = FactorMethod::least_squares;
  if (fr.k() == 0) {
    out.w = Vector(0);
    return out;
  }
  out.w = detail::weighted_ls(fr.loadings(), z.values(), nullptr);
  out.iterations = 1;
  return out;
}

/// argmin_W sum_i |z_i - b_i^T W| by iteratively reweighted least squares,
/// started from the LS solution, followed by weighted-median coordinate sweeps
/// and a vertex polish (an LAD optimum interpolates k of the observations).
inline FactorRealization estimate_w_lad(const FactorRepresentation& fr, const TestVector& z) {
  detail::check_shapes(fr, z);
  const Index k = fr.k();
  const Index p = fr.p();
  if (k < 1) throw ParameterError("estimate_w_lad: needs k >= 1");
  if (p <= k) throw ParameterError("estimate_w_lad: needs p > k");
  const Matrix& b = fr.loadings();
  const Vector& y = z.values();

  Vector w = detail::weighted_ls(b, y, nullptr);
  double obj = detail::lad_objective(b, y, w);
  Vector best = w;
  double best_obj = obj;

  FactorRealization out;
  out.method = FactorMethod::lad;
  out.converged = false;
  Vector weights(p);
  for (int it = 1; it <= kLadMaxIterations; ++it) {
    const Vector r = y - b * w;
    for (Index i = 0; i < p; ++i) weights[i] = 1.0 / std::max(std::abs(r[i]), kLadWeightFloor);
    Vector w_new;
    try {
      w_new = detail::weighted_ls(b, y, &weights);
    } catch (const RankError&) {
      out.iterations = it;
      break;
    }
    const double obj_new = detail::lad_objective(b, y, w_new);
    out.iterations = it;
    if (obj_new < best_obj) {
      best_obj = obj_new;
      best = w_new;
    }
    const double rel = std::abs(obj - obj_new) / std::max(obj, std::numeric_limits<double>::min());
    w = std::move(w_new);
    obj = obj_new;
    if (rel < kLadTolerance) {
      out.converged = true;
      break;
    }
  }

  // Coordinate sweeps: with the other coordinates fixed, the L1 objective in
  // w_j is minimized exactly by a weighted median. Exact for k = 1; for k > 1
  // each sweep can only lower the objective.
  {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(static_cast<std::size_t>(p));
    for (int sweep = 0; sweep < 50; ++sweep) {
      bool moved = false;
      for (Index j = 0; j < k; ++j) {
        const Vector r = y - b * best;
        pts.clear();
        double total = 0.0;
        for (Index i = 0; i < p; ++i) {
          const double bij = b(i, j);
          if (bij == 0.0) continue;
          pts.emplace_back(best[j] + r[i] / bij, std::abs(bij));
          total += std::abs(bij);
        }
        if (pts.empty()) continue;
        std::sort(pts.begin(), pts.end());
        double acc = 0.0;
        double median = pts.back().first;
        for (const auto& [v, wt] : pts) {
          acc += wt;
          if (acc >= 0.5 * total) {
            median = v;
            break;
          }
        }
        Vector trial = best;
        trial[j] = median;
        const double ov = detail::lad_objective(b, y, trial);
        if (ov < best_obj * (1.0 - 1e-15)) {
          best_obj = ov;
          best = std::move(trial);
          moved = true;
        }
      }
      if (!moved) break;
    }
  }

  // Vertex polish: interpolate the k observations with the smallest residuals.
  {
    const Vector r = (y - b * best).cwiseAbs();
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index c) { return r[a] < r[c]; });
    Matrix bs(k, k);
    Vector ys(k);
    for (Index j = 0; j < k; ++j) {
      bs.row(j) = b.row(idx[static_cast<std::size_t>(j)]);
      ys[j] = y[idx[static_cast<std::size_t>(j)]];
    }
    Eigen::FullPivLU<Matrix> lu(bs);
    if (lu.isInvertible()) {
      const Vector wv = lu.solve(ys);
      const double ov = detail::lad_objective(b, y, wv);
      if (wv.allFinite() && ov < best_obj) {
        best_obj = ov;
        best = wv;
      }
    }
  }
  out.w = std::move(best);
  return out;
}

struct PenalizedFit {
  FactorRealization realization;
  Vector mu_hat;       // incidental parameters mu*
  double objective = 0.0;
};

/// min over (W, mu) of 0.5 ||z - mu - B W||^2 + sum_i p_lambda(|mu_i|), by
/// alternating the thresholding update for mu and the LS update for W.
/// With the soft rule this is Huber regression of z on B at threshold lambda.
inline double penalized_objective(const Matrix& b, const Vector& z, const Vector& w, const Vector& mu, double lambda,
                                  ThresholdRule rule) {
  const Vector r = z - mu - (b.cols() > 0 ? Vector(b * w) : Vector::Zero(z.size()));
  double pen = 0.0;
  for (Index i = 0; i < mu.size(); ++i) pen += penalty_value(mu[i], lambda, rule);
  return 0.5 * r.squaredNorm() + pen;
}

inline PenalizedFit estimate_w_penalized(const FactorRepresentation& fr, const TestVector& z, ThresholdRule penalty,
                                         double lambda) {
  detail::check_shapes(fr, z);
  if (!(lambda >= 0.0)) throw ParameterError("estimate_w_penalized: lambda must be >= 0");
  const Matrix& b = fr.loadings();
  const Vector& y = z.values();
  const Index p = fr.p();

  PenalizedFit fit;
  fit.realization.method = FactorMethod::penalized;
  fit.realization.converged = false;
  Vector mu = Vector::Zero(p);
  Vector w = fr.k() > 0 ? detail::weighted_ls(b, y, nullptr) : Vector(0);
  double best_obj = penalized_objective(b, y, w, mu, lambda, penalty);
  Vector best_w = w;
  Vector best_mu = mu;

  for (int it = 1; it <= kPenalizedMaxIterations; ++it) {
    const Vector fitted = fr.k() > 0 ? Vector(b * w) : Vector::Zero(p);
    Vector mu_new(p);
    for (Index i = 0; i < p; ++i) mu_new[i] = apply_threshold(y[i] - fitted[i], lambda, penalty);
    Vector w_new = fr.k() > 0 ? detail::weighted_ls(b, Vector(y - mu_new), nullptr) : Vector(0);

    const double obj = penalized_objective(b, y, w_new, mu_new, lambda, penalty);
    fit.realization.iterations = it;
    if (obj <= best_obj) {
      best_obj = obj;
      best_w = w_new;
      best_mu = mu_new;
    }
    const double dw = (w_new - w).norm();
    const double dmu = (mu_new - mu).norm();
    w = std::move(w_new);
    mu = std::move(mu_new);
    if (dw <= 1e-12 * (1.0 + w.norm()) && dmu <= 1e-12 * (1.0 + mu.norm())) {
      fit.realization.converged = true;
      break;
    }
  }
  fit.realization.w = std::move(best_w);
  fit.mu_hat = std::move(best_mu);
  fit.objective = best_obj;
  return fit;
}

// ---------------------------------------------------------------------------
// FDP estimators

struct FdpEstimate {
  double V_hat = 0.0;
  double fdp_hat = 0.0;
  double fdp_hat_capped = 0.0;
};

namespace detail {

inline Vector factor_shift(const FactorRepresentation& fr, const FactorRealization& w) {
  if (fr.k() == 0) return Vector::Zero(fr.p());
  if (w.w.size() != fr.k()) throw ShapeError("factor realization length does not match the number of loadings");
  return fr.loadings() * w.w;
}

inline FdpEstimate finish(double v, Index R) {
  if (R < 0) throw ParameterError("number of rejections must be >= 0");
  FdpEstimate e;
  e.V_hat = v;
  e.fdp_hat = R == 0 ? 0.0 : v / static_cast<double>(R);
  e.fdp_hat_capped = std::min(e.fdp_hat, 1.0);
  return e;
}

}  // namespace detail

/// sum_i [Phi(a_i (z + eta_i)) + Phi(a_i (z - eta_i))] with eta = B W, for a
/// given (negative) critical value z. Indices may be restricted by a mask.
inline double expected_false_discoveries(const FactorRepresentation& fr, const FactorRealization& w, double z_half,
                                         const std::vector<bool>* mask = nullptr) {
  const Vector eta = detail::factor_shift(fr, w);
  const Vector& a = fr.a();
  CompensatedSum sum;
  for (Index i = 0; i < fr.p(); ++i) {
    if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
    sum.add(std_normal_cdf(a[i] * (z_half + eta[i])) + std_normal_cdf(a[i] * (z_half - eta[i])));
  }
  return sum.value();
}

inline FdpEstimate fdp_estimate(const FactorRepresentation& fr, const FactorRealization& w, double t, Index R) {
  check_threshold(t);
  return detail::finish(expected_false_discoveries(fr, w, std_normal_quantile(t / 2.0)), R);
}

/// Same summand as fdp_estimate, restricted to the true nulls.
inline double fdp_oracle(const FactorRepresentation& fr, const FactorRealization& w, double t, Index R,
                         const HypothesisTruth& truth) {
  check_threshold(t);
  if (truth.p() != fr.p()) throw ShapeError("fdp_oracle: truth and loadings differ in length");
  std::vector<bool> mask(static_cast<std::size_t>(fr.p()));
  for (Index i = 0; i < fr.p(); ++i) mask[static_cast<std::size_t>(i)] = truth.is_null(i);
  const double v = expected_false_discoveries(fr, w, std_normal_quantile(t / 2.0), &mask);
  return detail::finish(v, R).fdp_hat;
}

/// a_i (z_i - b_i^T W).
inline TestVector adjusted_statistics(const FactorRepresentation& fr, const FactorRealization& w, const TestVector& z) {
  detail::check_shapes(fr, z);
  const Vector eta = detail::factor_shift(fr, w);
  return TestVector((fr.a().array() * (z.values() - eta).array()).matrix());
}

/// sum_i [Phi(z/a_i + eta_i) + Phi(z/a_i - eta_i)] / R for the adjusted procedure.
inline FdpEstimate fdp_adjusted_estimate(const FactorRepresentation& fr, const FactorRealization& w, double t,
                                         Index R_adj) {
  check_threshold(t);
  const double z_half = std_normal_quantile(t / 2.0);
  const Vector eta = detail::factor_shift(fr, w);
  const Vector& a = fr.a();
  CompensatedSum sum;
  for (Index i = 0; i < fr.p(); ++i) {
    sum.add(std_normal_cdf(z_half / a[i] + eta[i]) + std_normal_cdf(z_half / a[i] - eta[i]));
  }
  return detail::finish(sum.value(), R_adj);
}

// ---------------------------------------------------------------------------
// Reports over a threshold grid

struct FdpRow {
  double t = 0.0;
  Index R = 0;
  double V_hat = 0.0;
  double fdp_hat = 0.0;
  double fdp_hat_capped = 0.0;
  std::optional<Index> V_true;
  std::optional<double> fdp_true;
  std::optional<double> fdp_oracle;
};

struct FdpReport {
  std::vector<FdpRow> rows;
};

inline void check_threshold_list(const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ParameterError("threshold list is empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    check_threshold(thresholds[i]);
    if (i > 0 && thresholds[i] < thresholds[i - 1]) throw ParameterError("thresholds must be sorted ascending");
  }
}

inline FdpReport fdp_curve(const TestVector& z, const FactorRepresentation& fr, const FactorRealization& w,
                           const std::vector<double>& thresholds, const HypothesisTruth* truth = nullptr) {
  check_threshold_list(thresholds);
  detail::check_shapes(fr, z);
  const PValueVector pv = pvalues(z);
  FdpReport rep;
  rep.rows.reserve(thresholds.size());
  for (double t : thresholds) {
    const RejectionCounts rc = rejection_counts(pv, t, truth);
    const FdpEstimate e = fdp_estimate(fr, w, t, rc.R);
    FdpRow row;
    row.t = t;
    row.R = rc.R;
    row.V_hat = e.V_hat;
    row.fdp_hat = e.fdp_hat;
    row.fdp_hat_capped = e.fdp_hat_capped;
    if (truth) {
      row.V_true = rc.V_true;
      row.fdp_true = safe_ratio(static_cast<double>(*rc.V_true), static_cast<double>(rc.R));
      row.fdp_oracle = fdp_oracle(fr, w, t, rc.R, *truth);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace pfa
