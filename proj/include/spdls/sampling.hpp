#pragma once

// Linear sampling operator X: S^m -> R^n, (X(M))_i = tr(X_i M), its adjoint
// v -> sum_i v_i X_i, and the measurement ensembles used in the experiments.
//
// The operator is stored as its n x m(m+1)/2 design matrix whose i-th row is
// svec(X_i); by the svec isometry tr(X_i M) = <svec X_i, svec M>.

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spdls/rng.hpp"
#include "spdls/symmat.hpp"

namespace spdls {

enum class Ensemble { Custom, OrthonormalBasis, Goe, Wishart, Block };

class SamplingOperator {
 public:
  SamplingOperator() = default;

  /// From an explicit design matrix (rows are svec coordinates).
  SamplingOperator(long dim_m, Matrix design, Ensemble ensemble = Ensemble::Custom, long q = 0)
      : dim_m_(dim_m), design_(std::move(design)), ensemble_(ensemble), wishart_q_(q) {
    if (dim_m < 1) throw InvalidInput("SamplingOperator: m must be positive");
    if (design_.cols() != triangular_size(dim_m)) {
      throw InvalidInput("SamplingOperator: design has " + std::to_string(design_.cols()) +
                         " columns, expected " + std::to_string(triangular_size(dim_m)));
    }
    if (!design_.allFinite()) throw InvalidInput("SamplingOperator: non-finite design entry");
  }

  /// From a list of measurement matrices of equal dimension.
  static SamplingOperator from_measurements(const std::vector<SymMat>& xs) {
    if (xs.empty()) throw InvalidInput("SamplingOperator: need at least one measurement");
    const long m = xs.front().dim();
    Matrix design(static_cast<long>(xs.size()), triangular_size(m));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].dim() != m) throw InvalidInput("SamplingOperator: measurement dims differ");
      design.row(static_cast<long>(i)) = svec_coords(xs[i].matrix()).transpose();
    }
    return SamplingOperator(m, std::move(design));
  }

  long dim_m() const { return dim_m_; }
  long n() const { return design_.rows(); }
  long svec_dim() const { return design_.cols(); }
  const Matrix& design() const { return design_; }
  Ensemble ensemble() const { return ensemble_; }
  long wishart_q() const { return wishart_q_; }

  SymMat measurement(long i) const { return inv_svec(Vector(design_.row(i).transpose())); }

  /// X(M)
  Vector apply(const SymMat& m) const {
    if (m.dim() != dim_m_) {
      throw InvalidInput("apply: matrix dim " + std::to_string(m.dim()) + ", operator dim " +
                         std::to_string(dim_m_));
    }
    return design_ * svec_coords(m.matrix());
  }

  /// X*(v) = sum_i v_i X_i
  SymMat adjoint(const Vector& v) const {
    if (v.size() != n()) {
      throw InvalidInput("adjoint: vector length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(n()));
    }
    return inv_svec(Vector(design_.transpose() * v));
  }

  /// Operator with every measurement multiplied by c.
  SamplingOperator scaled(double c) const {
    return SamplingOperator(dim_m_, c * design_, ensemble_, wishart_q_);
  }

 private:
  long dim_m_ = 0;
  Matrix design_;
  Ensemble ensemble_ = Ensemble::Custom;
  long wishart_q_ = 0;
};

// ---------------------------------------------------------------------------
// Ensembles. Measurement i is always drawn from child stream i of the seed.

/// Canonical orthonormal basis of S^m: e_j e_j^T and (e_j e_k^T + e_k e_j^T)/sqrt(2),
/// ordered like svec, so the design is the identity.
inline SamplingOperator gen_orthonormal_basis_design(long m) {
  if (m < 1) throw InvalidInput("gen_orthonormal_basis_design: m must be >= 1");
  const long d = triangular_size(m);
  return SamplingOperator(m, Matrix::Identity(d, d), Ensemble::OrthonormalBasis);
}

/// GOE(m): diagonal N(0,1), off-diagonal N(0,1/2). In svec coordinates every
/// entry is N(0,1).
inline Matrix goe_draw(long m, RngSeed seed) {
  NormalStream g(seed);
  Matrix x(m, m);
  for (long j = 0; j < m; ++j) {
    x(j, j) = g();
    for (long k = j + 1; k < m; ++k) x(j, k) = x(k, j) = g() * M_SQRT1_2;
  }
  return x;
}

inline SamplingOperator gen_goe(long m, long n, RngSeed seed) {
  if (m < 1 || n < 1) throw InvalidInput("gen_goe: m and n must be >= 1");
  Matrix design(n, triangular_size(m));
  for (long i = 0; i < n; ++i) {
    design.row(i) = svec_coords(goe_draw(m, seed.child(i))).transpose();
  }
  return SamplingOperator(m, std::move(design), Ensemble::Goe);
}

/// X_i = (1/q) sum_k z_ik z_ik^T with z_ik standard normal in R^m.
inline SamplingOperator gen_wishart(long m, long n, long q, RngSeed seed) {
  if (m < 1 || n < 1 || q < 1) throw InvalidInput("gen_wishart: m, n, q must be >= 1");
  Matrix design(n, triangular_size(m));
  for (long i = 0; i < n; ++i) {
    NormalStream g(seed.child(i));
    const Matrix z = g.matrix(m, q);
    const Matrix x = (z * z.transpose()) / double(q);
    design.row(i) = svec_coords(x).transpose();
  }
  return SamplingOperator(m, std::move(design), Ensemble::Wishart, q);
}

/// Block design X_i = diag(Y_i, -Y_i) with Y_i ~ GOE(m/2). Only the
/// difference of the two diagonal blocks of Sigma is observed.
inline SamplingOperator gen_block_design(long m, long n, RngSeed seed) {
  if (m < 2 || m % 2 != 0) throw InvalidInput("gen_block_design: m must be even and >= 2");
  if (n < 1) throw InvalidInput("gen_block_design: n must be >= 1");
  const long h = m / 2;
  Matrix design(n, triangular_size(m));
  for (long i = 0; i < n; ++i) {
    const Matrix y = goe_draw(h, seed.child(i));
    Matrix x = Matrix::Zero(m, m);
    x.topLeftCorner(h, h) = y;
    x.bottomRightCorner(h, h) = -y;
    design.row(i) = svec_coords(x).transpose();
  }
  return SamplingOperator(m, std::move(design), Ensemble::Block);
}

/// Largest eigenvalue of the symmetric map x -> apply(x) by power iteration,
/// stopped when the Rayleigh quotient changes by at most 1e-6 relative.
/// The result is inflated by 1e-4 so it bounds the true value from above in
/// practice.
template <typename Map>
double power_iteration_max(Map&& apply, long dim, int max_iters = 10000) {
  Vector x(dim);
  for (long i = 0; i < dim; ++i) x(i) = 1.0 + 0.01 * std::sin(double(i) + 1.0);
  x.normalize();
  double rho = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector y = apply(x);
    const double next = x.dot(y);
    const double ny = y.norm();
    if (ny == 0.0) return 0.0;
    x = y / ny;
    if (it > 0 && std::abs(next - rho) <= 1e-6 * std::abs(next)) return next * (1.0 + 1e-4);
    rho = next;
  }
  throw NumericFailure("power iteration did not converge in " + std::to_string(max_iters) +
                       " iterations");
}

/// Lipschitz constant of the gradient of x -> ||D x||^2 / (2 rows(D)).
inline double design_lipschitz(const Matrix& d) {
  const double n = double(d.rows());
  return power_iteration_max([&](const Vector& x) -> Vector { return d.transpose() * (d * x) / n; },
                             d.cols());
}

/// Upper bound on the largest eigenvalue of M -> X*(X(M))/n.
inline double lipschitz_estimate(const SamplingOperator& op) { return design_lipschitz(op.design()); }

// ---------------------------------------------------------------------------
// Text format: a header line "m n", then n lines holding svec(X_i) as
// space-separated decimals with 17 significant digits.

inline void write_operator(std::ostream& os, const SamplingOperator& op) {
  os << op.dim_m() << ' ' << op.n() << '\n';
  os << std::setprecision(17);
  for (long i = 0; i < op.n(); ++i) {
    for (long k = 0; k < op.svec_dim(); ++k) {
      if (k) os << ' ';
      os << op.design()(i, k);
    }
    os << '\n';
  }
}

inline SamplingOperator read_operator(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("read_operator: missing header line");
  std::istringstream header(line);
  header.imbue(std::locale::classic());
  long m = 0;
  long n = 0;
  if (!(header >> m >> n) || m < 1 || n < 1) {
    throw InvalidInput("read_operator: header must be 'm n' with positive integers");
  }
  const long p = triangular_size(m);
  Matrix design(n, p);
  for (long i = 0; i < n; ++i) {
    if (!std::getline(is, line)) {
      throw InvalidInput("read_operator: expected " + std::to_string(n) + " rows, got " +
                         std::to_string(i));
    }
    std::istringstream row(line);
    row.imbue(std::locale::classic());
    for (long k = 0; k < p; ++k) {
      if (!(row >> design(i, k))) {
        throw InvalidInput("read_operator: row " + std::to_string(i + 1) + " has fewer than " +
                           std::to_string(p) + " values");
      }
    }
    double extra = 0;
    if (row >> extra) {
      throw InvalidInput("read_operator: row " + std::to_string(i + 1) + " has more than " +
                         std::to_string(p) + " values");
    }
  }
  return SamplingOperator(m, std::move(design));
}

}  // namespace spdls
