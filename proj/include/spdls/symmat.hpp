#pragma once

// Dense real symmetric matrices, the svec isometry and the spectral
// projections (PSD cone, spectraplex, nuclear-norm ball, tangent subspace)
// that every solver and geometry routine is built from.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spdls/errors.hpp"

namespace spdls {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Number of free coordinates of an m x m symmetric matrix, m(m+1)/2.
constexpr long triangular_size(long m) { return m * (m + 1) / 2; }

/// Eigenvalues below this multiple of the spectral norm count as zero in
/// rank decisions.
inline constexpr double kRankTolerance = 1e-10;

/// Real symmetric m x m matrix. The input is symmetrized as (M + M^T)/2 on
/// construction and must be finite.
class SymMat {
 public:
  SymMat() = default;

  explicit SymMat(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw InvalidInput("SymMat: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
    }
    if (!m.allFinite()) throw InvalidInput("SymMat: non-finite entry");
    data_ = 0.5 * (m + m.transpose());
  }

  static SymMat zero(long m) { return SymMat(Matrix::Zero(m, m), Trusted{}); }
  static SymMat identity(long m) { return SymMat(Matrix::Identity(m, m), Trusted{}); }
  static SymMat diagonal(const Vector& d) {
    return SymMat(Matrix(d.asDiagonal()));
  }

  long dim() const { return data_.rows(); }
  const Matrix& matrix() const { return data_; }
  double operator()(long j, long k) const { return data_(j, k); }

  double trace() const { return data_.trace(); }
  double frobenius_norm() const { return data_.norm(); }
  double max_abs() const { return data_.size() ? data_.cwiseAbs().maxCoeff() : 0.0; }

  friend SymMat operator+(const SymMat& a, const SymMat& b) {
    check_same(a, b);
    return SymMat(a.data_ + b.data_, Trusted{});
  }
  friend SymMat operator-(const SymMat& a, const SymMat& b) {
    check_same(a, b);
    return SymMat(a.data_ - b.data_, Trusted{});
  }
  friend SymMat operator-(const SymMat& a) { return SymMat(-a.data_, Trusted{}); }
  friend SymMat operator*(double s, const SymMat& a) { return SymMat(s * a.data_, Trusted{}); }
  friend SymMat operator*(const SymMat& a, double s) { return s * a; }

  friend bool operator==(const SymMat& a, const SymMat& b) {
    return a.dim() == b.dim() && a.data_ == b.data_;
  }

  /// Wraps an already symmetric matrix without re-symmetrizing. For internal
  /// use where symmetry holds by construction (e.g. V diag(l) V^T).
  static SymMat from_symmetric(Matrix m) { return SymMat(std::move(m), Trusted{}); }

 private:
  struct Trusted {};
  SymMat(Matrix m, Trusted) : data_(std::move(m)) {}

  static void check_same(const SymMat& a, const SymMat& b) {
    if (a.dim() != b.dim()) {
      throw InvalidInput("SymMat: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    }
  }

  Matrix data_;
};

/// Frobenius inner product <A, B>_F = tr(A B).
inline double frobenius_inner(const SymMat& a, const SymMat& b) {
  if (a.dim() != b.dim()) throw InvalidInput("frobenius_inner: dimension mismatch");
  return a.matrix().cwiseProduct(b.matrix()).sum();
}

// ---------------------------------------------------------------------------
// svec

/// Image of a symmetric matrix under svec: upper triangle read row by row,
/// off-diagonal entries scaled by sqrt(2).
struct SVec {
  long dim_m = 0;
  Vector coords;
};

/// Recovers m from a coordinate count m(m+1)/2; returns -1 when the count is
/// not of that form.
inline long dim_from_svec_length(long len) {
  if (len < 1) return -1;
  const long m = static_cast<long>(std::lround((std::sqrt(8.0 * double(len) + 1.0) - 1.0) / 2.0));
  return triangular_size(m) == len ? m : -1;
}

inline Vector svec_coords(const Matrix& m) {
  const long d = m.rows();
  Vector v(triangular_size(d));
  long idx = 0;
  for (long j = 0; j < d; ++j) {
    v(idx++) = m(j, j);
    for (long k = j + 1; k < d; ++k) v(idx++) = M_SQRT2 * m(j, k);
  }
  return v;
}

inline SVec svec(const SymMat& m) { return {m.dim(), svec_coords(m.matrix())}; }

inline SymMat inv_svec(const Vector& coords) {
  const long d = dim_from_svec_length(coords.size());
  if (d < 0) {
    throw InvalidInput("inv_svec: length " + std::to_string(coords.size()) +
                       " is not of the form m(m+1)/2");
  }
  if (!coords.allFinite()) throw InvalidInput("inv_svec: non-finite coordinate");
  Matrix m(d, d);
  long idx = 0;
  for (long j = 0; j < d; ++j) {
    m(j, j) = coords(idx++);
    for (long k = j + 1; k < d; ++k) {
      m(j, k) = m(k, j) = coords(idx++) / M_SQRT2;
    }
  }
  return SymMat::from_symmetric(std::move(m));
}

inline SymMat inv_svec(const SVec& v) {
  if (triangular_size(v.dim_m) != v.coords.size()) {
    throw InvalidInput("inv_svec: dim_m does not match coordinate count");
  }
  return inv_svec(v.coords);
}

// ---------------------------------------------------------------------------
// Eigendecomposition and spectral functions

/// Eigenvalues in non-increasing order with matching orthonormal eigenvectors
/// stored column-wise.
struct EigDecomp {
  Vector eigvals;
  Matrix eigvecs;
};

inline EigDecomp eig_sym(const SymMat& m) {
  if (m.dim() == 0) return {Vector(), Matrix()};
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m.matrix());
  if (solver.info() != Eigen::Success) {
    // Eigen's tridiagonal QR gives up after 30 sweeps per eigenvalue.
    throw NumericFailure("eig_sym: no convergence after " + std::to_string(30 * m.dim()) +
                         " QR iterations (dim " + std::to_string(m.dim()) + ")");
  }
  EigDecomp out;
  out.eigvals = solver.eigenvalues().reverse();
  out.eigvecs = solver.eigenvectors().rowwise().reverse();
  return out;
}

/// V diag(values) V^T.
inline SymMat compose_spectral(const Matrix& vecs, const Vector& values) {
  Matrix out = vecs * values.asDiagonal() * vecs.transpose();
  out = 0.5 * (out + out.transpose());
  return SymMat::from_symmetric(std::move(out));
}

/// Applies a scalar function to the spectrum of m.
template <typename F>
SymMat spectral_map(const SymMat& m, F&& f) {
  const EigDecomp e = eig_sym(m);
  Vector values = e.eigvals.unaryExpr(std::forward<F>(f));
  return compose_spectral(e.eigvecs, values);
}

enum class Schatten { One, Two, Inf };

inline double schatten_norm(const SymMat& m, Schatten q) {
  if (m.dim() == 0) return 0.0;
  switch (q) {
    case Schatten::Two:
      return m.frobenius_norm();
    case Schatten::One:
      return eig_sym(m).eigvals.cwiseAbs().sum();
    case Schatten::Inf:
      return eig_sym(m).eigvals.cwiseAbs().maxCoeff();
  }
  return 0.0;
}

inline double nuclear_norm(const SymMat& m) { return schatten_norm(m, Schatten::One); }
inline double spectral_norm(const SymMat& m) { return schatten_norm(m, Schatten::Inf); }

inline double lambda_min(const SymMat& m) { return eig_sym(m).eigvals.minCoeff(); }
inline double lambda_max(const SymMat& m) { return eig_sym(m).eigvals.maxCoeff(); }

/// Number of eigenvalues exceeding kRankTolerance * ||m||_inf in magnitude.
inline long numerical_rank(const SymMat& m) {
  const Vector ev = eig_sym(m).eigvals.cwiseAbs();
  if (ev.size() == 0) return 0;
  const double cut = kRankTolerance * ev.maxCoeff();
  return static_cast<long>((ev.array() > cut).count());
}

// ---------------------------------------------------------------------------
// Vector projections used on spectra

/// Euclidean projection of v onto {x >= 0, sum x = t} by sort-and-threshold.
inline Vector project_simplex(const Vector& v, double t) {
  if (!(t > 0)) throw InvalidInput("project_simplex: radius must be positive");
  const long n = v.size();
  std::vector<double> s(v.data(), v.data() + n);
  std::sort(s.begin(), s.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (long k = 0; k < n; ++k) {
    cumsum += s[k];
    const double candidate = (cumsum - t) / double(k + 1);
    if (s[k] - candidate > 0) theta = candidate;
  }
  return (v.array() - theta).max(0.0).matrix();
}

/// Euclidean projection of v onto the l1 ball of the given radius.
inline Vector project_l1_ball(const Vector& v, double radius) {
  if (!(radius > 0)) throw InvalidInput("project_l1_ball: radius must be positive");
  if (v.lpNorm<1>() <= radius) return v;
  const Vector mag = project_simplex(v.cwiseAbs(), radius);
  Vector out(v.size());
  for (long i = 0; i < v.size(); ++i) out(i) = v(i) < 0 ? -mag(i) : mag(i);
  return out;
}

// ---------------------------------------------------------------------------
// Matrix projections

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to zero.
inline SymMat proj_psd(const SymMat& m) {
  return spectral_map(m, [](double l) { return std::max(l, 0.0); });
}

/// Splits m into its PSD and NSD spectral parts, m = pos + neg, <pos, neg> = 0.
inline std::pair<SymMat, SymMat> pos_neg_parts(const SymMat& m) {
  const EigDecomp e = eig_sym(m);
  const Vector pos = e.eigvals.cwiseMax(0.0);
  const Vector neg = e.eigvals.cwiseMin(0.0);
  return {compose_spectral(e.eigvecs, pos), compose_spectral(e.eigvecs, neg)};
}

/// Projection onto {S PSD, tr S = t}.
inline SymMat proj_spectraplex(const SymMat& m, double t = 1.0) {
  if (!(t > 0)) throw InvalidInput("proj_spectraplex: trace must be positive");
  const EigDecomp e = eig_sym(m);
  return compose_spectral(e.eigvecs, project_simplex(e.eigvals, t));
}

/// Projection onto {S : ||S||_1 <= radius}.
inline SymMat proj_nuclear_ball(const SymMat& m, double radius) {
  if (!(radius > 0)) throw InvalidInput("proj_nuclear_ball: radius must be positive");
  const EigDecomp e = eig_sym(m);
  if (e.eigvals.lpNorm<1>() <= radius) return m;
  return compose_spectral(e.eigvecs, project_l1_ball(e.eigvals, radius));
}

// ---------------------------------------------------------------------------
// Tangent subspace T = {U_par B + B^T U_par^T} and its complement
// T_perp = {U_perp A U_perp^T}.

class Subspace {
 public:
  /// Builds T from an m x r frame with orthonormal columns; U_perp is an
  /// orthonormal completion.
  explicit Subspace(const Matrix& u_par, double tol = 1e-10) : u_par_(u_par) {
    const long m = u_par.rows();
    const long r = u_par.cols();
    if (r < 1 || r >= m) {
      throw InvalidInput("Subspace: need 1 <= r < m, got r=" + std::to_string(r) +
                         ", m=" + std::to_string(m));
    }
    if ((u_par.transpose() * u_par - Matrix::Identity(r, r)).cwiseAbs().maxCoeff() > tol) {
      throw InvalidInput("Subspace: U_par columns are not orthonormal");
    }
    Eigen::HouseholderQR<Matrix> qr(u_par);
    Matrix q = qr.householderQ() * Matrix::Identity(m, m);
    u_perp_ = q.rightCols(m - r);
  }

  Subspace(const Matrix& u_par, const Matrix& u_perp, double tol = 1e-10)
      : u_par_(u_par), u_perp_(u_perp) {
    const long m = u_par.rows();
    const long r = u_par.cols();
    if (u_perp.rows() != m || u_perp.cols() != m - r || r < 1 || r >= m) {
      throw InvalidInput("Subspace: frame shapes inconsistent");
    }
    Matrix full(m, m);
    full << u_par, u_perp;
    if ((full.transpose() * full - Matrix::Identity(m, m)).cwiseAbs().maxCoeff() > tol) {
      throw InvalidInput("Subspace: [U_par U_perp] is not orthogonal");
    }
  }

  long dim_m() const { return u_par_.rows(); }
  long rank() const { return u_par_.cols(); }
  const Matrix& u_par() const { return u_par_; }
  const Matrix& u_perp() const { return u_perp_; }

  /// [U_par U_perp]
  Matrix full_basis() const {
    Matrix full(dim_m(), dim_m());
    full << u_par_, u_perp_;
    return full;
  }

  /// dim T = m r - r(r-1)/2
  long dim_T() const { return dim_m() * rank() - rank() * (rank() - 1) / 2; }

 private:
  Matrix u_par_;
  Matrix u_perp_;
};

enum class Part { Par, Perp };

inline SymMat proj_subspace(const SymMat& m, const Subspace& t, Part which) {
  if (m.dim() != t.dim_m()) {
    throw InvalidInput("proj_subspace: matrix dim " + std::to_string(m.dim()) +
                       " vs subspace dim " + std::to_string(t.dim_m()));
  }
  const Matrix& up = t.u_perp();
  Matrix perp = up * (up.transpose() * m.matrix() * up) * up.transpose();
  perp = 0.5 * (perp + perp.transpose());
  if (which == Part::Perp) return SymMat::from_symmetric(std::move(perp));
  Matrix par = m.matrix() - perp;
  return SymMat::from_symmetric(std::move(par));
}

}  // namespace spdls
