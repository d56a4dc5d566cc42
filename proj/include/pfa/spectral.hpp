#pragma once

// Dense symmetric eigendecomposition: Householder reduction to tridiagonal
// form followed by implicit-shift QL. A second entry point computes all
// eigenvalues but only the leading k eigenvectors (tridiagonal inverse
// iteration + back-transformation), which is what the factor pipeline needs.

#include "pfa/core.hpp"
#include "pfa/factor.hpp"

#include <cstdint>
#include <numeric>

namespace pfa {

/// Eigenvalues in non-increasing order; eigenvectors column-aligned with them.
/// `eigenvectors` has p columns for a full decomposition, or only the leading
/// k columns when produced by sym_eigen_top.
struct EigenSystem {
  Vector eigenvalues;
  Matrix eigenvectors;

  Index dim() const noexcept { return eigenvalues.size(); }
  Index num_vectors() const noexcept { return eigenvectors.cols(); }
};

namespace detail {

struct Tridiagonal {
  Matrix packed;    // Householder vectors (essential parts) below the subdiagonal
  Vector taus;      // reflector coefficients, 0 means identity
  Vector diag;
  Vector offdiag;   // offdiag[i] couples i and i+1
};

inline Tridiagonal tridiagonalize(const Matrix& m) {
  const Index n = m.rows();
  Tridiagonal t;
  t.packed = m;
  t.taus = Vector::Zero(std::max<Index>(n - 1, 0));
  t.offdiag = Vector::Zero(std::max<Index>(n - 1, 0));
  Matrix& a = t.packed;
  Vector v(n);
  Vector w(n);

  for (Index i = 0; i + 1 < n; ++i) {
    const Index rem = n - i - 1;
    const double c0 = a(i + 1, i);
    const double tail_sq = rem > 1 ? a.col(i).tail(rem - 1).squaredNorm() : 0.0;

    if (tail_sq <= std::numeric_limits<double>::min()) {
      if (rem > 1) a.col(i).tail(rem - 1).setZero();
      t.offdiag[i] = c0;
      continue;
    }

    double beta = std::sqrt(c0 * c0 + tail_sq);
    if (c0 >= 0.0) beta = -beta;
    a.col(i).tail(rem - 1) /= (c0 - beta);
    const double tau = (beta - c0) / beta;
    t.offdiag[i] = beta;
    t.taus[i] = tau;

    auto vv = v.head(rem);
    vv[0] = 1.0;
    vv.tail(rem - 1) = a.col(i).tail(rem - 1);

    auto a22 = a.bottomRightCorner(rem, rem);
    auto ww = w.head(rem);
    ww.noalias() = a22.template selfadjointView<Eigen::Lower>() * vv;
    ww *= tau;
    ww += (-0.5 * tau * ww.dot(vv)) * vv;
    a22.template selfadjointView<Eigen::Lower>().rankUpdate(vv, ww, -1.0);
  }
  t.diag = a.diagonal();
  return t;
}

/// x <- Q x where Q = H_0 H_1 ... H_{n-2} from the reduction.
inline void apply_q(const Tridiagonal& t, Eigen::Ref<Vector> x) {
  const Index n = t.packed.rows();
  for (Index i = n - 2; i >= 0; --i) {
    const double tau = t.taus[i];
    if (tau == 0.0) continue;
    const Index rem = n - i - 1;
    auto seg = x.tail(rem);
    const double s = seg[0] + t.packed.col(i).tail(rem - 1).dot(seg.tail(rem - 1));
    seg[0] -= tau * s;
    seg.tail(rem - 1) -= (tau * s) * t.packed.col(i).tail(rem - 1);
  }
}

inline Matrix form_q(const Tridiagonal& t) {
  const Index n = t.packed.rows();
  Matrix q = Matrix::Identity(n, n);
  Vector v(n);
  Eigen::RowVectorXd tmp(n);
  for (Index i = n - 2; i >= 0; --i) {
    const double tau = t.taus[i];
    if (tau == 0.0) continue;
    const Index rem = n - i - 1;
    auto vv = v.head(rem);
    vv[0] = 1.0;
    vv.tail(rem - 1) = t.packed.col(i).tail(rem - 1);
    auto block = q.bottomRightCorner(rem, rem);
    auto tt = tmp.head(rem);
    tt.noalias() = vv.transpose() * block;
    block.noalias() -= (tau * vv) * tt;
  }
  return q;
}

/// Implicit QL on the tridiagonal (d, e). On return d holds the eigenvalues
/// (unsorted). If z is non-null, the rotations are accumulated into its columns.
inline void tridiagonal_ql(Vector& d, Vector e_in, Matrix* z) {
  const Index n = d.size();
  if (n == 0) return;
  Vector e = Vector::Zero(n);
  e.head(n - 1) = e_in.head(n - 1);

  const long cap = 50L * std::max<Index>(n, 1);
  long total_iterations = 0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  double f = 0.0;
  double tst1 = 0.0;
  const Index rows = z ? z->rows() : 0;

  for (Index l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    Index m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      do {
        if (++total_iterations > cap) {
          throw NumericError("symmetric QL iteration did not converge", total_iterations);
        }
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (Index i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (Index i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          if (z) {
            double* zi = z->col(i).data();
            double* zi1 = z->col(i + 1).data();
            for (Index k = 0; k < rows; ++k) {
              const double hk = zi1[k];
              zi1[k] = s * zi[k] + c * hk;
              zi[k] = c * zi[k] - s * hk;
            }
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

inline std::vector<Index> descending_order(const Vector& d) {
  std::vector<Index> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return d[a] > d[b]; });
  return idx;
}

/// First component with magnitude above 1e-12 is made positive.
inline void normalize_sign(Eigen::Ref<Vector> v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-12) {
      if (v[i] < 0) v = -v;
      return;
    }
  }
}

/// Solve (T - sigma I) x = b in place with partial pivoting. Zero pivots are
/// replaced by `tiny`, which is what inverse iteration wants.
inline void shifted_tridiagonal_solve(const Vector& diag, const Vector& off, double sigma, double tiny,
                                      Vector& b) {
  const Index n = diag.size();
  Vector d = diag.array() - sigma;
  Vector du = off;   // superdiagonal
  Vector dl = off;   // subdiagonal, reused for the second superdiagonal fill
  Vector du2 = Vector::Zero(std::max<Index>(n - 2, 0));
  for (Index i = 0; i + 1 < n; ++i) {
    if (std::abs(d[i]) >= std::abs(dl[i])) {
      if (d[i] == 0.0) d[i] = tiny;
      const double fact = dl[i] / d[i];
      d[i + 1] -= fact * du[i];
      b[i + 1] -= fact * b[i];
      if (i + 2 < n) du2[i] = 0.0;
    } else {
      const double fact = d[i] / dl[i];
      d[i] = dl[i];
      const double temp = d[i + 1];
      d[i + 1] = du[i] - fact * temp;
      if (i + 2 < n) {
        du2[i] = du[i + 1];
        du[i + 1] = -fact * du2[i];
      }
      du[i] = temp;
      const double tb = b[i];
      b[i] = b[i + 1];
      b[i + 1] = tb - fact * b[i + 1];
    }
  }
  if (d[n - 1] == 0.0) d[n - 1] = tiny;
  b[n - 1] /= d[n - 1];
  if (n > 1) b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
  for (Index i = n - 3; i >= 0; --i) {
    b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
  }
}

inline double start_component(std::uint64_t seed, Index i) {
  std::uint64_t x = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return static_cast<double>(x >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace detail

/// Full decomposition of a symmetric matrix.
inline EigenSystem sym_eigen(const SymmetricMatrix& m) {
  const Index n = m.dim();
  EigenSystem es;
  if (n == 0) return es;
  auto t = detail::tridiagonalize(m.dense());
  Matrix z = detail::form_q(t);
  Vector d = t.diag;
  detail::tridiagonal_ql(d, t.offdiag, &z);

  const auto order = detail::descending_order(d);
  es.eigenvalues.resize(n);
  es.eigenvectors.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    es.eigenvalues[j] = d[src];
    es.eigenvectors.col(j) = z.col(src);
    detail::normalize_sign(es.eigenvectors.col(j));
  }
  return es;
}

/// All eigenvalues, non-increasing.
inline Vector sym_eigenvalues(const SymmetricMatrix& m) {
  const Index n = m.dim();
  if (n == 0) return Vector();
  auto t = detail::tridiagonalize(m.dense());
  Vector d = t.diag;
  detail::tridiagonal_ql(d, t.offdiag, nullptr);
  std::sort(d.data(), d.data() + n, std::greater<>());
  return d;
}

/// All eigenvalues plus the eigenvectors of the k largest. Falls back to the
/// full decomposition when k is a large share of the dimension or when an
/// inverse-iteration vector fails its residual check.
inline EigenSystem sym_eigen_top(const SymmetricMatrix& m, Index k) {
  const Index n = m.dim();
  if (k < 0 || k > n) throw ParameterError("sym_eigen_top: k out of range");
  if (n <= 32 || 4 * k > n) {
    EigenSystem full = sym_eigen(m);
    full.eigenvectors.conservativeResize(n, k);
    return full;
  }

  auto t = detail::tridiagonalize(m.dense());
  Vector d = t.diag;
  detail::tridiagonal_ql(d, t.offdiag, nullptr);
  std::sort(d.data(), d.data() + n, std::greater<>());

  const double norm = std::max(d.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double cluster_tol = 1e-3 * norm;
  const double pert = 10.0 * eps * norm;

  EigenSystem es;
  es.eigenvalues = d;
  es.eigenvectors.resize(n, k);
  Matrix ytri(n, k);
  Index cluster_start = 0;
  double prev_sigma = 0.0;

  for (Index j = 0; j < k; ++j) {
    double sigma = d[j];
    if (j > 0 && d[j - 1] - d[j] > cluster_tol) cluster_start = j;
    if (j > 0 && prev_sigma - sigma < pert) sigma = prev_sigma - pert;
    prev_sigma = sigma;

    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = detail::start_component(static_cast<std::uint64_t>(j), i);
    x.normalize();
    for (int iter = 0; iter < 4; ++iter) {
      detail::shifted_tridiagonal_solve(t.diag, t.offdiag, sigma, eps * norm, x);
      for (Index c = cluster_start; c < j; ++c) x -= ytri.col(c).dot(x) * ytri.col(c);
      const double nx = x.norm();
      if (!(nx > 0.0) || !std::isfinite(nx)) throw NumericError("inverse iteration broke down", iter + 1);
      x /= nx;
    }
    ytri.col(j) = x;
  }

  const Matrix& a = m.dense();
  const double tol = 1e-9 * std::max(norm, 1e-300);
  for (Index j = 0; j < k; ++j) {
    Vector x = ytri.col(j);
    detail::apply_q(t, x);
    x.normalize();
    const double resid = (a.template selfadjointView<Eigen::Lower>() * x - d[j] * x).norm();
    if (!(resid <= tol)) {
      EigenSystem full = sym_eigen(m);
      full.eigenvectors.conservativeResize(n, k);
      return full;
    }
    detail::normalize_sign(x);
    es.eigenvectors.col(j) = x;
  }
  return es;
}

/// B = (sqrt(lambda_1) gamma_1, ..., sqrt(lambda_k) gamma_k).
inline FactorRepresentation top_k_loadings(const EigenSystem& es, Index k, double cap = kDefaultLoadingCap) {
  if (k == 0) return FactorRepresentation::none(es.dim());
  if (k < 0 || k > es.dim()) throw ParameterError("top_k_loadings: k must satisfy 1 <= k <= p");
  if (k > es.num_vectors()) throw ParameterError("top_k_loadings: eigen system holds fewer than k vectors");
  if (!(es.eigenvalues[k - 1] > 0.0)) {
    throw RankError("top_k_loadings: eigenvalue " + std::to_string(k) + " is not positive");
  }
  Matrix b(es.dim(), k);
  for (Index j = 0; j < k; ++j) b.col(j) = std::sqrt(es.eigenvalues[j]) * es.eigenvectors.col(j);
  return FactorRepresentation(std::move(b), cap);
}

/// Eigen-perturbation diagnostics between a reference matrix A and a
/// perturbed matrix B: operator-norm distance, eigenvalue shifts, the
/// Davis-Kahan style bound on eigenvector movement, and the movement itself.
struct PerturbationReport {
  double op_norm_diff = 0.0;
  Vector eigenvalue_diffs;    // |lambda_i(A) - lambda_i(B)|
  Vector sin_theta_bounds;    // sqrt(2)||A-B|| / min(|lb_{i-1} - la_i|, |la_i - lb_{i+1}|), +inf if gap is 0
  Vector eigenvector_diffs;   // ||gamma_i(B) - gamma_i(A)|| after sign alignment
};

inline PerturbationReport eigsh_perturbation_report(const SymmetricMatrix& a, const SymmetricMatrix& b) {
  if (a.dim() != b.dim()) throw ShapeError("eigsh_perturbation_report: dimension mismatch");
  const Index n = a.dim();
  PerturbationReport rep;
  if (n == 0) return rep;

  const Vector diff_eigs = sym_eigenvalues(SymmetricMatrix(Matrix(a.dense() - b.dense())));
  rep.op_norm_diff = std::max(std::abs(diff_eigs[0]), std::abs(diff_eigs[n - 1]));

  const EigenSystem ea = sym_eigen(a);
  const EigenSystem eb = sym_eigen(b);
  rep.eigenvalue_diffs = (ea.eigenvalues - eb.eigenvalues).cwiseAbs();

  constexpr double inf = std::numeric_limits<double>::infinity();
  rep.sin_theta_bounds.resize(n);
  rep.eigenvector_diffs.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double la = ea.eigenvalues[i];
    const double up = i > 0 ? std::abs(eb.eigenvalues[i - 1] - la) : inf;
    const double down = i + 1 < n ? std::abs(la - eb.eigenvalues[i + 1]) : inf;
    const double gap = std::min(up, down);
    rep.sin_theta_bounds[i] = gap > 0.0 ? std::sqrt(2.0) * rep.op_norm_diff / gap : inf;

    const double dot = ea.eigenvectors.col(i).dot(eb.eigenvectors.col(i));
    const double sign = dot < 0 ? -1.0 : 1.0;
    rep.eigenvector_diffs[i] = (sign * eb.eigenvectors.col(i) - ea.eigenvectors.col(i)).norm();
  }
  return rep;
}

}  // namespace pfa
