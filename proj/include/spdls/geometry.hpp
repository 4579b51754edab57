#pragma once

// Geometric constants of a sampling operator and the error bounds built on
// them.
//
//   tau0_sq      min over the spectraplex of (1/n)||X(D)||^2
//   tau_sq_R     (1/n) dist^2 between X(trace-R spectraplex) and X(trace-1 spectraplex)
//   tau_sq_T     (1/n) dist^2 between X(T) and X(T_perp spectraplex)
//   phi_sq_T     min over D in T of (1/n)||X(D)||^2 / ||D||_1^2
//   mu_T         max of (1/n)<X(D), X(D')> over ||D||_1 <= 1, D in T, D' in the T_perp spectraplex
//   lambda0      ||X*(eps)||_inf / n
//
// Quantities below kEffectiveZero are treated as zero by the bounds.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spdls/rng.hpp"
#include "spdls/sampling.hpp"
#include "spdls/solvers.hpp"
#include "spdls/symmat.hpp"

namespace spdls {

inline constexpr double kEffectiveZero = 1e-6;

struct ConstantResult {
  double value = 0.0;
  bool converged = false;
};

// ---------------------------------------------------------------------------
// Spectraplex constants

inline ConstantResult tau0_sq(const SamplingOperator& op, const SolverConfig& cfg = geometry_config()) {
  const long m = op.dim_m();
  const LeastSquaresTerm f{op.design(), Vector::Zero(op.n()), 2.0};
  const Vector x0 = svec_coords(Matrix::Identity(m, m) / double(m));
  const EngineResult r = accelerated_prox_gradient(
      f, [](const Vector& v, double) { return svec_proj_spectraplex(v, 1.0); },
      [](const Vector&) { return 0.0; }, x0, f.lipschitz(), cfg);
  return {std::max(0.0, f.value(r.x)), r.converged};
}

struct TauRResult {
  double value = 0.0;
  SymMat a;
  SymMat b;
  /// max(theta R - delta, 0)^2 for the certificate built from the final residual.
  double dual_value = 0.0;
  bool converged = false;
};

inline TauRResult tau_sq_R(const SamplingOperator& op, double R,
                           const SolverConfig& cfg = geometry_config()) {
  if (!(R > 1.0)) throw InvalidInput("tau_sq_R: R must exceed 1, got " + std::to_string(R));
  const long m = op.dim_m();
  const long d = op.svec_dim();
  Matrix stacked(op.n(), 2 * d);
  stacked << op.design(), -op.design();
  const LeastSquaresTerm f{stacked, Vector::Zero(op.n()), 2.0};
  Vector x0(2 * d);
  x0 << svec_coords(Matrix::Identity(m, m) * (R / double(m))),
      svec_coords(Matrix::Identity(m, m) / double(m));
  auto prox = [d, R](const Vector& v, double) {
    Vector out(v.size());
    out << svec_proj_spectraplex(v.head(d), R), svec_proj_spectraplex(v.tail(d), 1.0);
    return out;
  };
  const EngineResult r = accelerated_prox_gradient(f, prox, [](const Vector&) { return 0.0; },
                                                   x0, f.lipschitz(), cfg);
  TauRResult out;
  out.a = inv_svec(Vector(r.x.head(d)));
  out.b = inv_svec(Vector(r.x.tail(d)));
  const Vector resid = op.apply(out.a) - op.apply(out.b);
  out.value = resid.squaredNorm() / double(op.n());
  out.converged = r.converged;
  const double norm = resid.norm();
  if (norm > 0) {
    const SymMat cert = (1.0 / std::sqrt(double(op.n()))) * op.adjoint(Vector(resid / norm));
    const Vector ev = eig_sym(cert).eigvals;
    const double gap = ev.minCoeff() * R - ev.maxCoeff();
    out.dual_value = gap > 0 ? gap * gap : 0.0;
  }
  return out;
}

struct Prop3Constants {
  double R_star = 0.0;
  double tau_star_sq = 0.0;
};

/// Constants from a vector a with ||a||_2 <= 1 such that X*(a)/sqrt(n) is
/// positive definite; std::nullopt when its smallest eigenvalue is <= 0.
inline std::optional<Prop3Constants> check_prop3(const SamplingOperator& op, const Vector& a,
                                                 double zeta) {
  if (a.size() != op.n()) {
    throw InvalidInput("check_prop3: a has length " + std::to_string(a.size()) + ", n=" +
                       std::to_string(op.n()));
  }
  if (a.norm() > 1.0 + 1e-12) throw InvalidInput("check_prop3: ||a||_2 must be <= 1");
  if (!(zeta > 1.0)) throw InvalidInput("check_prop3: zeta must exceed 1");
  const SymMat g = (1.0 / std::sqrt(double(op.n()))) * op.adjoint(a);
  const Vector ev = eig_sym(g).eigvals;
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0)) return std::nullopt;
  return Prop3Constants{zeta * hi / lo, (zeta - 1.0) * (zeta - 1.0) * hi * hi};
}

// ---------------------------------------------------------------------------
// Constants tied to a subspace T. Everything is computed in the frame
// U = [U_par U_perp], where T collects the svec coordinates (j, k) with j < r
// and the T_perp block is the trailing (m-r) x (m-r) corner.

struct RotatedDesign {
  long m = 0;
  long r = 0;
  Matrix par;   ///< n x dim T
  Matrix perp;  ///< n x (m-r)(m-r+1)/2, svec order of the corner block
  Matrix basis; ///< U
};

inline RotatedDesign rotate_design(const SamplingOperator& op, const Subspace& t) {
  if (op.dim_m() != t.dim_m()) {
    throw InvalidInput("subspace dimension " + std::to_string(t.dim_m()) +
                       " does not match operator dimension " + std::to_string(op.dim_m()));
  }
  RotatedDesign rd;
  rd.m = op.dim_m();
  rd.r = t.rank();
  rd.basis = t.full_basis();
  const long m = rd.m;
  const long r = rd.r;
  rd.par.resize(op.n(), t.dim_T());
  rd.perp.resize(op.n(), triangular_size(m - r));
  for (long i = 0; i < op.n(); ++i) {
    const Matrix y = rd.basis.transpose() * op.measurement(i).matrix() * rd.basis;
    long p = 0;
    long q = 0;
    for (long j = 0; j < m; ++j) {
      for (long k = j; k < m; ++k) {
        const double v = j == k ? y(j, k) : M_SQRT2 * y(j, k);
        if (j < r) {
          rd.par(i, p++) = v;
        } else {
          rd.perp(i, q++) = v;
        }
      }
    }
  }
  return rd;
}

/// Matrix in the rotated frame with T-coordinates c and a zero corner block.
inline Matrix t_coords_matrix(const Vector& c, long m, long r) {
  Matrix out = Matrix::Zero(m, m);
  long p = 0;
  for (long j = 0; j < r; ++j) {
    for (long k = j; k < m; ++k) {
      const double v = j == k ? c(p) : c(p) * M_SQRT1_2;
      out(j, k) = v;
      out(k, j) = v;
      ++p;
    }
  }
  return out;
}

/// T-coordinates of a rotated-frame matrix; drops the corner block.
inline Vector t_coords(const Matrix& x, long r) {
  const long m = x.rows();
  Vector c(m * r - r * (r - 1) / 2);
  long p = 0;
  for (long j = 0; j < r; ++j)
    for (long k = j; k < m; ++k) c(p++) = j == k ? x(j, k) : M_SQRT2 * x(j, k);
  return c;
}

/// Orthonormal basis of range(a), rank decided relative to the largest pivot.
inline Matrix range_basis(const Matrix& a) {
  if (a.cols() == 0) return Matrix(a.rows(), 0);
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  qr.setThreshold(1e-12);
  const long k = qr.rank();
  return Matrix(qr.householderQ()) .leftCols(k);
}

struct TauTResult {
  double value = 0.0;
  /// Minimizing corner block (trace 1, PSD) in the U_perp frame.
  SymMat corner;
  bool converged = false;
};

/// Theta in T enters the objective linearly without constraints, so it is
/// eliminated exactly: residuals are taken orthogonal to range(X restricted
/// to T), leaving a convex quadratic over the (m-r)-spectraplex.
inline TauTResult tau_sq_T(const RotatedDesign& rd, const SolverConfig& cfg = geometry_config()) {
  const long k = rd.m - rd.r;
  const double n = double(rd.par.rows());
  const Matrix q = range_basis(rd.par);
  const Matrix w = rd.perp - q * (q.transpose() * rd.perp);
  const Matrix gram = (w.transpose() * w) / n;
  const QuadraticFormTerm f{gram};
  const Vector x0 = svec_coords(Matrix::Identity(k, k) / double(k));
  const EngineResult r = accelerated_prox_gradient(
      f, [](const Vector& v, double) { return svec_proj_spectraplex(v, 1.0); },
      [](const Vector&) { return 0.0; }, x0, std::max(f.lipschitz(), 1e-300), cfg);
  return {std::max(0.0, f.value(r.x)), inv_svec(r.x), r.converged};
}

inline TauTResult tau_sq_T(const SamplingOperator& op, const Subspace& t,
                           const SolverConfig& cfg = geometry_config()) {
  return tau_sq_T(rotate_design(op, t), cfg);
}

struct PhiResult {
  double estimate = 0.0;
  double certified_lower = 0.0;
  /// Best direction found, normalized to ||D||_1 = 1, in the original frame.
  SymMat direction;
};

namespace detail {

struct RatioEval {
  double value;
  double nuc;
  Vector grad;
};

/// f(c) = ||P c||^2 / (n ||D(c)||_1^2) with its gradient in T-coordinates.
inline RatioEval phi_ratio(const RotatedDesign& rd, const Matrix& gram, const Vector& c) {
  const Matrix d = t_coords_matrix(c, rd.m, rd.r);
  const EigDecomp e = eig_sym(SymMat::from_symmetric(d));
  const double nuc = e.eigvals.cwiseAbs().sum();
  const Vector gc = gram * c;
  const double num = c.dot(gc);
  Vector sign = e.eigvals.unaryExpr([](double l) { return double((l > 0) - (l < 0)); });
  const Vector nuc_grad = t_coords(e.eigvecs * sign.asDiagonal() * e.eigvecs.transpose(), rd.r);
  RatioEval out;
  out.nuc = nuc;
  if (nuc <= 0) {
    out.value = std::numeric_limits<double>::infinity();
    out.grad = Vector::Zero(c.size());
    return out;
  }
  out.value = std::max(0.0, num) / (nuc * nuc);
  out.grad = (2.0 / (nuc * nuc)) * gc - (2.0 * num / (nuc * nuc * nuc)) * nuc_grad;
  return out;
}

inline std::pair<double, Vector> descend_ratio(const RotatedDesign& rd, const Matrix& gram,
                                               Vector c, int max_iters) {
  RatioEval cur = phi_ratio(rd, gram, c);
  if (!std::isfinite(cur.value)) return {cur.value, c};
  c /= cur.nuc;
  cur = phi_ratio(rd, gram, c);
  double step = 1.0 / std::max(gram.diagonal().maxCoeff(), 1e-300);
  for (int it = 0; it < max_iters; ++it) {
    const double g2 = cur.grad.squaredNorm();
    if (g2 <= 1e-30 || cur.value <= 1e-300) break;
    bool accepted = false;
    RatioEval next;
    Vector trial;
    for (int bt = 0; bt < 60; ++bt) {
      trial = c - step * cur.grad;
      next = phi_ratio(rd, gram, trial);
      if (std::isfinite(next.value) && next.value <= cur.value - 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double drop = cur.value - next.value;
    c = trial / next.nuc;
    cur = phi_ratio(rd, gram, c);
    step *= 2.0;
    if (drop <= 1e-13 * cur.value) break;
  }
  return {cur.value, c};
}

}  // namespace detail

/// Local search for the restricted eigenvalue. The estimate is a value
/// attained at a feasible point, so it bounds the true minimum from above;
/// `certified_lower` uses ||D||_1^2 <= 2r ||D||_F^2 on T.
inline PhiResult phi_sq_T(const RotatedDesign& rd, int restarts, RngSeed seed = {0},
                          int max_iters = 5000) {
  if (restarts < 1) throw InvalidInput("phi_sq_T: restarts must be >= 1");
  const double n = double(rd.par.rows());
  const Matrix gram = rd.par.transpose() * rd.par / n;
  const long p = gram.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const Vector& ev = es.eigenvalues();
  const double lo = ev(0);
  const double hi = ev(p - 1);
  PhiResult out;
  out.certified_lower =
      (lo <= double(p) * std::numeric_limits<double>::epsilon() * std::max(hi, 0.0)) ? 0.0
                                                                                     : lo / (2.0 * rd.r);
  double best = std::numeric_limits<double>::infinity();
  Vector best_c;
  NormalStream normals(seed);
  for (int k = 0; k < restarts; ++k) {
    Vector c0 = k == 0 ? Vector(es.eigenvectors().col(0)) : normals.vector(p);
    auto [value, c] = detail::descend_ratio(rd, gram, std::move(c0), max_iters);
    if (value < best) {
      best = value;
      best_c = std::move(c);
    }
  }
  out.estimate = best;
  const Matrix d = rd.basis * t_coords_matrix(best_c, rd.m, rd.r) * rd.basis.transpose();
  out.direction = SymMat(d);
  return out;
}

inline PhiResult phi_sq_T(const SamplingOperator& op, const Subspace& t, int restarts,
                          RngSeed seed = {0}) {
  return phi_sq_T(rotate_design(op, t), restarts, seed);
}

namespace detail {

/// Projection onto T intersected with the nuclear ball of radius 1, by
/// Dykstra's alternating scheme (rotated frame, T = zero corner block).
inline Matrix project_t_nuclear_ball(const Matrix& z, long r, int iters = 200) {
  const long m = z.rows();
  const long k = m - r;
  Matrix x = z;
  Matrix p = Matrix::Zero(m, m);
  Matrix q = Matrix::Zero(m, m);
  for (int it = 0; it < iters; ++it) {
    Matrix y = x + p;
    y.bottomRightCorner(k, k).setZero();
    p = x + p - y;
    const Matrix x_new = proj_nuclear_ball(SymMat::from_symmetric(Matrix(y + q)), 1.0).matrix();
    q = y + q - x_new;
    const double change = (x_new - x).norm();
    x = x_new;
    if (change <= 1e-12 * std::max(1.0, x.norm())) break;
  }
  x.bottomRightCorner(k, k).setZero();
  const double nuc = eig_sym(SymMat::from_symmetric(x)).eigvals.cwiseAbs().sum();
  if (nuc > 1.0) x /= nuc;
  return x;
}

}  // namespace detail

struct MuResult {
  double value = 0.0;
  SymMat delta;
  SymMat delta_perp;
};

/// Alternating maximization. The corner block has the closed form v v^T for
/// the top eigenvector v; the T block takes projected gradient ascent steps
/// of growing length. The result is attained at a feasible pair and so
/// bounds the true maximum from below.
inline MuResult mu_T(const RotatedDesign& rd, int restarts, RngSeed seed = {0},
                     int max_rounds = 50) {
  if (restarts < 1) throw InvalidInput("mu_T: restarts must be >= 1");
  const long m = rd.m;
  const long r = rd.r;
  const long k = m - r;
  const double n = double(rd.par.rows());
  const Matrix cross = rd.par.transpose() * rd.perp / n;
  MuResult out;
  out.delta = SymMat::zero(m);
  out.delta_perp = SymMat::zero(m);
  double best = 0.0;
  NormalStream normals(seed);
  for (int s = 0; s < restarts; ++s) {
    const Vector v = normals.vector(m);
    Matrix d = v * v.transpose();
    d.bottomRightCorner(k, k).setZero();
    d /= std::max(eig_sym(SymMat::from_symmetric(d)).eigvals.cwiseAbs().sum(), 1e-300);
    Vector a;
    double value = -std::numeric_limits<double>::infinity();
    Matrix best_d = d;
    Vector best_a;
    for (int round = 0; round < max_rounds; ++round) {
      const Vector c = t_coords(d, r);
      const SymMat g = inv_svec(Vector(cross.transpose() * c));
      const Vector top = eig_sym(g).eigvecs.col(0);
      a = svec_coords(top * top.transpose());
      const Matrix h = t_coords_matrix(cross * a, m, r);
      const double hn = h.norm();
      if (hn == 0.0) break;
      double step = 1.0 / hn;
      for (int it = 0; it < 20; ++it) {
        d = detail::project_t_nuclear_ball(d + step * h, r);
        step *= 2.0;
      }
      const double next = t_coords(d, r).dot(cross * a);
      const bool stalled = next - value <= 1e-10 * std::max(1.0, std::abs(next));
      if (next > value) {
        value = next;
        best_d = d;
        best_a = a;
      }
      if (stalled) break;
    }
    if (best_a.size() > 0 && value > best) {
      best = value;
      out.delta = SymMat(Matrix(rd.basis * best_d * rd.basis.transpose()));
      Matrix corner = Matrix::Zero(m, m);
      corner.bottomRightCorner(k, k) = inv_svec(best_a).matrix();
      out.delta_perp = SymMat(Matrix(rd.basis * corner * rd.basis.transpose()));
    }
  }
  out.value = best;
  return out;
}

/// Certified upper value sigma_max(X|T) sigma_max(X|T_perp) / n, from
/// Cauchy-Schwarz and ||.||_F <= ||.||_1 on both blocks.
inline double mu_T_upper(const RotatedDesign& rd) {
  const double n = double(rd.par.rows());
  auto top = [](const Matrix& a) {
    return a.size() ? Eigen::JacobiSVD<Matrix>(a).singularValues()(0) : 0.0;
  };
  return top(rd.par) * top(rd.perp) / n;
}

inline MuResult mu_T(const SamplingOperator& op, const Subspace& t, int restarts,
                     RngSeed seed = {0}) {
  return mu_T(rotate_design(op, t), restarts, seed);
}

// ---------------------------------------------------------------------------
// Noise level and bounds

inline double lambda0(const SamplingOperator& op, const Vector& eps) {
  if (eps.size() != op.n()) {
    throw InvalidInput("lambda0: eps has length " + std::to_string(eps.size()) + ", n=" +
                       std::to_string(op.n()));
  }
  return spectral_norm((1.0 / double(op.n())) * op.adjoint(eps));
}

/// ||(1/n) sum X_i^2||_inf
inline double vn_sq(const SamplingOperator& op) {
  const long m = op.dim_m();
  Matrix acc = Matrix::Zero(m, m);
  for (long i = 0; i < op.n(); ++i) {
    const Matrix x = op.measurement(i).matrix();
    acc.noalias() += x * x;
  }
  return spectral_norm(SymMat(Matrix(acc / double(op.n()))));
}

/// Analytic ceiling on V_n^2 for averages of q rank-one Gaussian outer products.
inline double wishart_vn_sq_ceiling(long m, long n, long q) {
  const double mq = double(m) / double(q);
  const double a = 1.0 + 1.0 / std::sqrt(double(q)) + std::sqrt(mq / double(n));
  const double b = 1.0 + std::sqrt(mq) + std::sqrt(4.0 * mq * std::log(double(n)));
  return a * a * b * b;
}

struct Lambda0Bound {
  double bound = 0.0;
  double vn_sq = 0.0;
  /// Present for Wishart operators.
  std::optional<double> wishart_ceiling;
};

inline Lambda0Bound lambda0_bound(const SamplingOperator& op, double sigma, double tail_mu) {
  if (!(sigma > 0)) throw InvalidInput("lambda0_bound: sigma must be positive");
  if (tail_mu < 0) throw InvalidInput("lambda0_bound: tail_mu must be >= 0");
  Lambda0Bound out;
  out.vn_sq = vn_sq(op);
  const double m = double(op.dim_m());
  out.bound = sigma * std::sqrt((1.0 + tail_mu) * 2.0 * std::log(2.0 * m) * out.vn_sq / double(op.n()));
  if (op.ensemble() == Ensemble::Wishart) {
    out.wishart_ceiling = wishart_vn_sq_ceiling(op.dim_m(), op.n(), op.wishart_q());
  }
  return out;
}

inline double slow_rate_bound(double norm1_target, double lambda0, double R_star,
                              double tau_star_sq) {
  if (!(R_star > 1.0)) throw InvalidInput("slow_rate_bound: R_star must exceed 1");
  if (!(tau_star_sq > 0)) throw InvalidInput("slow_rate_bound: tau_star_sq must be positive");
  const double a = 2.0 * (1.0 + R_star) * lambda0 * norm1_target;
  const double b = 2.0 * lambda0 * norm1_target + 8.0 * lambda0 * lambda0 * R_star * R_star / tau_star_sq;
  return std::max(a, b);
}

/// Minimum of slow_rate_bound over (R, tau^2(X, R)) pairs; entries with
/// R <= 1 or tau^2 at or below the effective zero are skipped. +inf when
/// nothing is usable.
inline double slow_rate_bound_grid(double norm1_target, double lambda0,
                                   const std::vector<std::pair<double, double>>& grid) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [R, tau] : grid) {
    if (R > 1.0 && tau > kEffectiveZero) best = std::min(best, slow_rate_bound(norm1_target, lambda0, R, tau));
  }
  return best;
}

inline double est_error_bound(double lambda0, double tau_sq_T, double phi_sq_T, double mu_T) {
  if (tau_sq_T <= kEffectiveZero || phi_sq_T <= kEffectiveZero) {
    return std::numeric_limits<double>::infinity();
  }
  const double t1 = 8.0 * lambda0 * mu_T / (tau_sq_T * phi_sq_T) * (1.5 + mu_T / phi_sq_T) +
                    4.0 * lambda0 * (1.0 / phi_sq_T + 1.0 / tau_sq_T);
  const double t2 = 8.0 * lambda0 / phi_sq_T * (1.0 + mu_T / phi_sq_T);
  const double t3 = 8.0 * lambda0 / tau_sq_T;
  return std::max({t1, t2, t3});
}

// ---------------------------------------------------------------------------
// Report

struct GeometryReport {
  double tau0_sq = 0.0;
  std::vector<std::pair<double, double>> tau_sq_at_R;
  std::optional<double> tau_sq_T;
  std::optional<double> phi_sq_T_estimate;
  std::optional<double> phi_sq_T_certified_lower;
  std::optional<double> mu_T_estimate;
  double lambda0 = 0.0;
  double lambda0_bound = 0.0;
  double vn_sq = 0.0;
  std::optional<double> vn_sq_wishart_ceiling;
  double slow_rate_bound = 0.0;
  std::optional<double> est_error_bound;
  std::set<std::string> heuristic_flags;

  friend bool operator==(const GeometryReport&, const GeometryReport&) = default;
};

struct GeometryOptions {
  std::vector<double> R_grid{1.5, 2.0, 4.0};
  double sigma = 1.0;
  double tail_mu = 1.0;
  double norm1_target = 1.0;
  /// Noise realization for lambda0; drawn as N(0, sigma^2) from `seed` if empty.
  std::optional<Vector> eps;
  int restarts = 10;
  RngSeed seed{0};
  SolverConfig solver = geometry_config();
};

inline GeometryReport compute_geometry(const SamplingOperator& op, const Subspace* t,
                                       const GeometryOptions& opt = {}) {
  GeometryReport rep;
  const ConstantResult t0 = tau0_sq(op, opt.solver);
  rep.tau0_sq = t0.value;
  if (!t0.converged) rep.heuristic_flags.insert("tau0_sq_not_converged");
  if (t0.value <= kEffectiveZero) rep.heuristic_flags.insert("tau0_sq_effective_zero");
  for (double R : opt.R_grid) {
    const TauRResult tr = tau_sq_R(op, R, opt.solver);
    rep.tau_sq_at_R.emplace_back(R, tr.value);
    if (!tr.converged) rep.heuristic_flags.insert("tau_sq_at_R_not_converged");
  }
  Vector eps;
  if (opt.eps) {
    eps = *opt.eps;
  } else {
    NormalStream normals(opt.seed.child(0));
    eps = opt.sigma * normals.vector(op.n());
  }
  rep.lambda0 = lambda0(op, eps);
  const Lambda0Bound lb = lambda0_bound(op, opt.sigma, opt.tail_mu);
  rep.lambda0_bound = lb.bound;
  rep.vn_sq = lb.vn_sq;
  rep.vn_sq_wishart_ceiling = lb.wishart_ceiling;
  rep.slow_rate_bound = slow_rate_bound_grid(opt.norm1_target, rep.lambda0, rep.tau_sq_at_R);
  if (t != nullptr) {
    const RotatedDesign rd = rotate_design(op, *t);
    const TauTResult tt = tau_sq_T(rd, opt.solver);
    rep.tau_sq_T = tt.value;
    if (!tt.converged) rep.heuristic_flags.insert("tau_sq_T_not_converged");
    if (tt.value <= kEffectiveZero) rep.heuristic_flags.insert("tau_sq_T_effective_zero");
    const PhiResult ph = phi_sq_T(rd, opt.restarts, opt.seed.child(1));
    rep.phi_sq_T_estimate = ph.estimate;
    rep.phi_sq_T_certified_lower = ph.certified_lower;
    rep.heuristic_flags.insert("phi_sq_T_estimate");
    const MuResult mu = mu_T(rd, opt.restarts, opt.seed.child(2));
    rep.mu_T_estimate = mu.value;
    rep.heuristic_flags.insert("mu_T_estimate");
    rep.est_error_bound = est_error_bound(rep.lambda0, tt.value, ph.certified_lower, mu.value);
  }
  return rep;
}

namespace detail {

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

inline double parse_real(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw InvalidInput(context + ": '" + s + "' is not a number");
  }
  return v;
}

}  // namespace detail

/// One "name value" pair per line. R-indexed entries use "tau_sq_at_R[R]".
inline void write_report(std::ostream& os, const GeometryReport& rep) {
  using detail::format_real;
  auto opt = [&os](const char* name, const std::optional<double>& v) {
    if (v) os << name << ' ' << format_real(*v) << '\n';
  };
  os << "tau0_sq " << format_real(rep.tau0_sq) << '\n';
  for (const auto& [R, v] : rep.tau_sq_at_R) {
    os << "tau_sq_at_R[" << format_real(R) << "] " << format_real(v) << '\n';
  }
  opt("tau_sq_T", rep.tau_sq_T);
  opt("phi_sq_T_estimate", rep.phi_sq_T_estimate);
  opt("phi_sq_T_certified_lower", rep.phi_sq_T_certified_lower);
  opt("mu_T_estimate", rep.mu_T_estimate);
  os << "lambda0 " << format_real(rep.lambda0) << '\n';
  os << "lambda0_bound " << format_real(rep.lambda0_bound) << '\n';
  os << "vn_sq " << format_real(rep.vn_sq) << '\n';
  opt("vn_sq_wishart_ceiling", rep.vn_sq_wishart_ceiling);
  os << "slow_rate_bound " << format_real(rep.slow_rate_bound) << '\n';
  opt("est_error_bound", rep.est_error_bound);
  std::string flags;
  for (const auto& f : rep.heuristic_flags) flags += (flags.empty() ? "" : ",") + f;
  os << "heuristic_flags " << (flags.empty() ? "-" : flags) << '\n';
}

inline GeometryReport read_report(std::istream& is) {
  GeometryReport rep;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) {
      throw InvalidInput("report line " + std::to_string(lineno) + ": expected 'name value'");
    }
    const std::string key = line.substr(0, sp);
    const std::string val = line.substr(sp + 1);
    const std::string ctx = "report line " + std::to_string(lineno);
    if (key == "heuristic_flags") {
      if (val == "-") continue;
      std::stringstream ss(val);
      std::string f;
      while (std::getline(ss, f, ',')) rep.heuristic_flags.insert(f);
      continue;
    }
    if (key.rfind("tau_sq_at_R[", 0) == 0 && key.back() == ']') {
      const double R = detail::parse_real(key.substr(12, key.size() - 13), ctx);
      rep.tau_sq_at_R.emplace_back(R, detail::parse_real(val, ctx));
      continue;
    }
    const double v = detail::parse_real(val, ctx);
    if (key == "tau0_sq") rep.tau0_sq = v;
    else if (key == "tau_sq_T") rep.tau_sq_T = v;
    else if (key == "phi_sq_T_estimate") rep.phi_sq_T_estimate = v;
    else if (key == "phi_sq_T_certified_lower") rep.phi_sq_T_certified_lower = v;
    else if (key == "mu_T_estimate") rep.mu_T_estimate = v;
    else if (key == "lambda0") rep.lambda0 = v;
    else if (key == "lambda0_bound") rep.lambda0_bound = v;
    else if (key == "vn_sq") rep.vn_sq = v;
    else if (key == "vn_sq_wishart_ceiling") rep.vn_sq_wishart_ceiling = v;
    else if (key == "slow_rate_bound") rep.slow_rate_bound = v;
    else if (key == "est_error_bound") rep.est_error_bound = v;
    else throw InvalidInput(ctx + ": unknown key '" + key + "'");
  }
  return rep;
}

}  // namespace spdls
