#pragma once

// Covariance estimation for the approximate factor model: sample covariance,
// principal-component residuals, adaptive entrywise thresholding of the
// residual covariance, and the assembled POET estimator.

#include "pfa/core.hpp"
#include "pfa/spectral.hpp"
#include "pfa/threshold.hpp"

#include <Eigen/Cholesky>

#include <optional>

namespace pfa {

struct PoetConfig {
  std::optional<Index> k;           // nullopt means "auto"
  double C = 0.5;
  ThresholdRule rule = ThresholdRule::soft;
  double epsilon_k = 0.1;
  double pd_floor = 1e-6;
  bool escalate_c = true;
  int max_doublings = 6;
  Index k_max = 20;                 // search limit for k = auto
  bool compute_min_eig = true;      // exact lambda_min of the thresholded residual (one extra eigensolve)

  void validate() const {
    if (!(C >= 0.0) || !std::isfinite(C)) throw ParameterError("PoetConfig: C must be finite and >= 0");
    if (!(epsilon_k > 0.0)) throw ParameterError("PoetConfig: epsilon_k must be > 0");
    if (!(pd_floor >= 0.0)) throw ParameterError("PoetConfig: pd_floor must be >= 0");
    if (k && *k < 0) throw ParameterError("PoetConfig: k must be >= 0");
    if (max_doublings < 0) throw ParameterError("PoetConfig: max_doublings must be >= 0");
    if (k_max < 0) throw ParameterError("PoetConfig: k_max must be >= 0");
  }
};

struct ResidualStats {
  SymmetricMatrix sigma_hat;   // residual covariances, divisor n
  Matrix theta_hat;            // variances of the products u_il u_jl (theta_ij^2), >= 0
  Matrix residuals;            // n x p
  Matrix loadings;             // p x k, B~ = X_c^T F / n
};

struct PoetEstimate {
  SymmetricMatrix sigma_poet;
  SymmetricMatrix low_rank;    // B~ B~^T
  Matrix loadings;             // B~
  SymmetricMatrix sigma_u_thr;
  double omega_p = 0.0;
  double c_used = 0.0;
  Index k_used = 0;
  double min_eig_residual = std::numeric_limits<double>::quiet_NaN();
  bool residual_pd = false;    // Cholesky of (sigma_u_thr - pd_floor I) succeeded
  bool k_auto = false;
  std::vector<Index> k_selection_counts;  // count above eps*sqrt(p) for K = 0, 1, ... during auto search
};

namespace detail {

inline Matrix centered(const Matrix& x) {
  return x.rowwise() - x.colwise().mean();
}

/// alpha * X^T X with the lower triangle mirrored, so the result is exactly symmetric.
inline Matrix crossprod(const Matrix& x, double alpha = 1.0) {
  const Index p = x.cols();
  Matrix s = Matrix::Zero(p, p);
  s.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), alpha);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return s;
}

/// X^T X / n.
inline Matrix gram_over_n(const Matrix& xc) { return crossprod(xc, 1.0 / static_cast<double>(xc.rows())); }

}  // namespace detail

/// (1/n) sum_l (X_l - Xbar)(X_l - Xbar)^T.
inline SymmetricMatrix sample_covariance(const DataMatrix& x) {
  return SymmetricMatrix(detail::gram_over_n(detail::centered(x.values())));
}

inline double poet_omega(Index n, Index p) {
  return 1.0 / std::sqrt(static_cast<double>(p)) +
         std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
}

/// Residuals after removing k principal factors, their covariance and the
/// entrywise variances used for adaptive thresholds.
inline ResidualStats residual_stats(const DataMatrix& x, Index k) {
  const Index n = x.n();
  const Index p = x.p();
  if (k < 0 || k >= std::min(n, p)) {
    throw ParameterError("residual_stats: k must satisfy 0 <= k < min(n, p), got k = " + std::to_string(k));
  }
  const Matrix xc = detail::centered(x.values());
  const double dn = static_cast<double>(n);

  ResidualStats rs;
  Matrix u = xc;
  rs.loadings = Matrix(p, k);
  if (k > 0) {
    // Leading eigenvectors of the n x n Gram matrix X_c X_c^T, scaled so F^T F / n = I.
    Matrix f;
    bool have_f = false;
    if (p < n) {
      const EigenSystem es = sym_eigen_top(SymmetricMatrix(detail::crossprod(xc)), k);
      if (es.eigenvalues[k - 1] > 1e-12 * std::max(es.eigenvalues[0], 1e-300)) {
        f = xc * es.eigenvectors;
        for (Index j = 0; j < k; ++j) f.col(j) *= std::sqrt(dn / es.eigenvalues[j]);
        have_f = true;
      }
    }
    if (!have_f) {
      const EigenSystem es = sym_eigen_top(SymmetricMatrix(detail::crossprod(xc.transpose())), k);
      f = std::sqrt(dn) * es.eigenvectors;
    }
    rs.loadings = xc.transpose() * f / dn;
    u.noalias() -= f * rs.loadings.transpose();
  }

  Matrix s = detail::gram_over_n(u);
  const Matrix u2 = u.array().square().matrix();
  Matrix m4 = detail::gram_over_n(u2);
  rs.theta_hat = (m4.array() - s.array().square()).cwiseMax(0.0).matrix();
  rs.sigma_hat = SymmetricMatrix(s);
  rs.residuals = std::move(u);
  return rs;
}

/// Entrywise thresholding with tau_ij = C * sqrt(theta_ij) * omega_p. The
/// diagonal is returned unthresholded.
inline SymmetricMatrix adaptive_threshold(const ResidualStats& rs, double omega_p, double C, ThresholdRule rule) {
  if (!(omega_p > 0.0)) throw ParameterError("adaptive_threshold: omega_p must be > 0");
  if (!(C >= 0.0)) throw ParameterError("adaptive_threshold: C must be >= 0");
  const Matrix& s = rs.sigma_hat.dense();
  const Index p = s.rows();
  if (rs.theta_hat.rows() != p || rs.theta_hat.cols() != p) throw ShapeError("adaptive_threshold: theta shape mismatch");
  Matrix out(p, p);
  for (Index j = 0; j < p; ++j) {
    out(j, j) = s(j, j);
    for (Index i = j + 1; i < p; ++i) {
      const double tau = C * std::sqrt(rs.theta_hat(i, j)) * omega_p;
      const double v = apply_threshold(s(i, j), tau, rule);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return SymmetricMatrix(out);
}

/// #{i : lambda_i > epsilon * sqrt(p)} for non-increasing eigenvalues.
inline Index select_num_factors(const Vector& eigenvalues, Index p, double epsilon) {
  if (!(epsilon > 0.0)) throw ParameterError("select_num_factors: epsilon must be > 0");
  if (p < 1) throw ParameterError("select_num_factors: p must be >= 1");
  for (Index i = 1; i < eigenvalues.size(); ++i) {
    if (eigenvalues[i] > eigenvalues[i - 1]) {
      throw ParameterError("select_num_factors: eigenvalues must be sorted non-increasing");
    }
  }
  const double thr = epsilon * std::sqrt(static_cast<double>(p));
  Index count = 0;
  while (count < eigenvalues.size() && eigenvalues[count] > thr) ++count;
  return count;
}

/// D^{-1} Sigma D^{-1} with D = diag(sqrt(sigma_jj)); the diagonal is set to exactly 1.
inline std::pair<SymmetricMatrix, Vector> to_correlation(const SymmetricMatrix& sigma) {
  const Index p = sigma.dim();
  Vector d(p);
  for (Index j = 0; j < p; ++j) {
    const double v = sigma(j, j);
    if (!(v > 0.0)) {
      throw DataError("to_correlation: variable " + std::to_string(j) + " has non-positive variance");
    }
    d[j] = std::sqrt(v);
  }
  Matrix c(p, p);
  const Matrix& s = sigma.dense();
  for (Index j = 0; j < p; ++j) {
    c(j, j) = 1.0;
    for (Index i = j + 1; i < p; ++i) {
      const double v = s(i, j) / (d[i] * d[j]);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return {SymmetricMatrix(c), d};
}

namespace detail {

inline bool is_pd_above(const SymmetricMatrix& m, double floor) {
  Matrix shifted = m.dense();
  shifted.diagonal().array() -= floor;
  Eigen::LLT<Matrix> llt(shifted);
  return llt.info() == Eigen::Success;
}

inline PoetEstimate poet_fixed_k(const DataMatrix& x, Index k, const PoetConfig& cfg) {
  const ResidualStats rs = residual_stats(x, k);
  PoetEstimate est;
  est.k_used = k;
  est.omega_p = poet_omega(x.n(), x.p());
  est.loadings = rs.loadings;

  double c = cfg.C;
  SymmetricMatrix thr = adaptive_threshold(rs, est.omega_p, c, cfg.rule);
  bool pd = is_pd_above(thr, cfg.pd_floor);
  if (cfg.escalate_c) {
    for (int step = 0; step < cfg.max_doublings && !pd && c > 0.0; ++step) {
      c *= 2.0;
      thr = adaptive_threshold(rs, est.omega_p, c, cfg.rule);
      pd = is_pd_above(thr, cfg.pd_floor);
    }
  }
  est.c_used = c;
  est.residual_pd = pd;
  if (cfg.compute_min_eig) {
    const Vector ev = sym_eigenvalues(thr);
    est.min_eig_residual = ev[ev.size() - 1];
  }

  Matrix low = Matrix::Zero(x.p(), x.p());
  if (k > 0) {
    low.selfadjointView<Eigen::Lower>().rankUpdate(rs.loadings, 1.0);
    low.triangularView<Eigen::StrictlyUpper>() = low.transpose();
  }
  est.sigma_poet = SymmetricMatrix(Matrix(low + thr.dense()));
  est.low_rank = SymmetricMatrix(low);
  est.sigma_u_thr = std::move(thr);
  return est;
}

}  // namespace detail

/// POET estimate. With k = auto, K is the smallest value whose own estimate
/// (rescaled to a correlation matrix) has at most K eigenvalues above
/// epsilon_k * sqrt(p). Candidates are scored at the configured C without
/// escalation; escalation of C at small K would threshold away the very
/// factor correlations the count is meant to detect. The returned estimate is
/// then built at the selected K with the full configuration.
inline PoetEstimate poet_covariance(const DataMatrix& x, const PoetConfig& cfg) {
  cfg.validate();
  const Index limit = std::min(x.n(), x.p()) - 1;
  if (cfg.k) {
    if (*cfg.k > limit) {
      throw ParameterError("poet_covariance: k = " + std::to_string(*cfg.k) + " must be < min(n, p)");
    }
    return detail::poet_fixed_k(x, *cfg.k, cfg);
  }

  PoetConfig scoring = cfg;
  scoring.escalate_c = false;
  scoring.compute_min_eig = false;
  const Index k_hi = std::min(limit, cfg.k_max);
  std::vector<Index> counts;
  Index chosen = k_hi;
  for (Index kk = 0; kk <= k_hi; ++kk) {
    const PoetEstimate trial = detail::poet_fixed_k(x, kk, scoring);
    const Vector ev = sym_eigenvalues(to_correlation(trial.sigma_poet).first);
    const Index count = select_num_factors(ev, x.p(), cfg.epsilon_k);
    counts.push_back(count);
    if (count <= kk) {
      chosen = kk;
      break;
    }
  }
  PoetEstimate est = detail::poet_fixed_k(x, chosen, cfg);
  est.k_auto = true;
  est.k_selection_counts = std::move(counts);
  return est;
}

}  // namespace pfa
