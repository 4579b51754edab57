#pragma once

// Estimators for trace regression y = X(Sigma*) + eps:
//
//   solve_cls            min (1/2n)||y - X(S)||^2            over S PSD
//   solve_ols            min-norm least squares               over S symmetric
//   solve_nucreg         (1/2n)||y - X(S)||^2 + lambda ||S||_1
//   solve_psd_tracereg   (1/2n)||y - X(S)||^2 + lambda tr(S)  over S PSD
//   solve_chen           min tr(S) s.t. S PSD, ||y - X(S)||_1 <= lambda
//   solve_spiked         solve_cls on y - sigma^2 X(I)
//
// All first-order solvers share accelerated_prox_gradient, which works in
// svec coordinates and calls a spectral prox on each step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "spdls/sampling.hpp"
#include "spdls/symmat.hpp"

namespace spdls {

struct SolverConfig {
  int max_iters = 5000;
  double rel_obj_tol = 1e-9;
  double fixed_point_tol = 1e-8;
  bool acceleration = true;
  bool restart_on_nonmonotone = true;
  /// Stop once the objective drops to this value (0 disables).
  double abs_obj_tol = 0.0;

  void validate() const {
    if (max_iters < 1) throw InvalidInput("SolverConfig: max_iters must be >= 1");
    if (!(rel_obj_tol > 0) || !(fixed_point_tol > 0)) {
      throw InvalidInput("SolverConfig: tolerances must be positive");
    }
    if (abs_obj_tol < 0) throw InvalidInput("SolverConfig: abs_obj_tol must be >= 0");
  }
};

/// Settings used by every geometry-constant solve: stop on the fixed-point
/// residual (or an objective at the double-precision floor), not on
/// objective progress.
inline SolverConfig geometry_config() {
  SolverConfig cfg;
  cfg.max_iters = 50000;
  cfg.fixed_point_tol = 1e-9;
  cfg.rel_obj_tol = std::numeric_limits<double>::min();
  cfg.abs_obj_tol = 1e-15;
  return cfg;
}

struct SolverReport {
  SymMat estimate;
  /// (1/2n)||y - X(estimate)||^2, recomputed from the final estimate.
  double objective = 0.0;
  /// Objective including the penalty (equal to `objective` for cls/ols;
  /// tr(estimate) for solve_chen).
  double penalized_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
  double fixed_point_residual = 0.0;
  int restarts = 0;
};

// ---------------------------------------------------------------------------
// Smooth parts

/// f(x) = weight/(2n) ||y - D x||^2, n = rows(D).
struct LeastSquaresTerm {
  const Matrix& design;
  Vector y;
  double weight = 1.0;

  double value(const Vector& x) const {
    return weight * (y - design * x).squaredNorm() / (2.0 * double(design.rows()));
  }
  double value_grad(const Vector& x, Vector& grad) const {
    const Vector r = y - design * x;
    const double n = double(design.rows());
    grad = -(weight / n) * (design.transpose() * r);
    return weight * r.squaredNorm() / (2.0 * n);
  }
  double lipschitz() const { return weight * design_lipschitz(design); }
};

/// f(x) = x^T G x with G symmetric PSD.
struct QuadraticFormTerm {
  const Matrix& gram;

  double value(const Vector& x) const { return std::max(0.0, x.dot(gram * x)); }
  double value_grad(const Vector& x, Vector& grad) const {
    grad = gram * x;
    const double v = x.dot(grad);
    grad *= 2.0;
    return std::max(0.0, v);
  }
  double lipschitz() const {
    return 2.0 * power_iteration_max([&](const Vector& v) -> Vector { return gram * v; },
                                     gram.cols());
  }
};

struct EngineResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
  double fixed_point_residual = 0.0;
  int restarts = 0;
};

/// Accelerated proximal gradient (FISTA) with function-value restart and
/// step halving when the quadratic upper bound fails.
///
/// `prox(v, step)` returns the prox of step*g at v; `penalty(x)` evaluates g.
/// The starting point is passed through prox(., 0) so iterates are always
/// feasible. After a restart the rejected extrapolated step is discarded,
/// so the recorded trace is non-increasing whenever restarts are enabled.
template <typename Smooth, typename Prox, typename Penalty>
EngineResult accelerated_prox_gradient(const Smooth& f, Prox&& prox, Penalty&& penalty,
                                       const Vector& x0, double lipschitz,
                                       const SolverConfig& cfg) {
  cfg.validate();
  double lip = lipschitz > 0 ? lipschitz : 1.0;
  EngineResult out;
  Vector x = prox(x0, 0.0);
  double fx = f.value(x) + penalty(x);
  out.trace.push_back(fx);
  Vector z = x;
  double t = 1.0;
  Vector grad;
  bool converged = false;
  double fp = std::numeric_limits<double>::infinity();
  int it = 0;
  for (it = 1; it <= cfg.max_iters; ++it) {
    const double fz = f.value_grad(z, grad);
    Vector x_new;
    double f_new = 0.0;
    for (int bt = 0;; ++bt) {
      x_new = prox(Vector(z - grad / lip), 1.0 / lip);
      const Vector d = x_new - z;
      f_new = f.value(x_new);
      const double model = fz + grad.dot(d) + 0.5 * lip * d.squaredNorm();
      if (f_new <= model + 1e-12 * (std::abs(fz) + 1e-300) || bt >= 60) break;
      lip *= 2.0;
    }
    if (!x_new.allFinite() || !std::isfinite(f_new)) {
      throw NumericFailure("accelerated_prox_gradient: non-finite iterate at iteration " +
                           std::to_string(it));
    }
    const double F_new = f_new + penalty(x_new);
    if (cfg.acceleration && cfg.restart_on_nonmonotone && t > 1.0 && F_new > fx) {
      // Momentum overshot: restart from the last accepted point.
      z = x;
      t = 1.0;
      ++out.restarts;
      continue;
    }
    fp = (x_new - x).norm();
    const double x_norm = x.norm();
    const double change = std::abs(fx - F_new);
    const double scale = std::max(std::abs(fx), std::numeric_limits<double>::min());
    if (cfg.acceleration) {
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = x_new + ((t - 1.0) / t_new) * (x_new - x);
      t = t_new;
    } else {
      z = x_new;
    }
    x = std::move(x_new);
    fx = F_new;
    out.trace.push_back(fx);
    // An unchanged objective only means f is flat at double resolution, not
    // that x has stopped moving, so it does not count as convergence.
    if (fp <= cfg.fixed_point_tol * std::max(1.0, x_norm) ||
        (change > 0 && change <= cfg.rel_obj_tol * scale) || fx <= cfg.abs_obj_tol) {
      converged = true;
      break;
    }
  }
  out.x = std::move(x);
  out.value = fx;
  out.iterations = std::min(it, cfg.max_iters);
  out.converged = converged;
  out.fixed_point_residual = fp;
  return out;
}

// ---------------------------------------------------------------------------
// Spectral prox maps in svec coordinates

inline Vector svec_proj_psd(const Vector& v) { return svec_coords(proj_psd(inv_svec(v)).matrix()); }

inline Vector svec_proj_spectraplex(const Vector& v, double t) {
  return svec_coords(proj_spectraplex(inv_svec(v), t).matrix());
}

/// Eigenvalues l -> sign(l) max(|l| - level, 0).
inline Vector svec_soft_threshold(const Vector& v, double level) {
  if (level <= 0) return v;
  const SymMat m = inv_svec(v);
  return svec_coords(spectral_map(m, [level](double l) {
                       return l > level ? l - level : (l < -level ? l + level : 0.0);
                     }).matrix());
}

/// Eigenvalues l -> max(l - level, 0).
inline Vector svec_shift_clip(const Vector& v, double level) {
  const SymMat m = inv_svec(v);
  return svec_coords(
      spectral_map(m, [level](double l) { return std::max(l - level, 0.0); }).matrix());
}

namespace detail {

inline void check_observations(const SamplingOperator& op, const Vector& y) {
  if (y.size() != op.n()) {
    throw InvalidInput("observation vector has length " + std::to_string(y.size()) +
                       ", operator has n=" + std::to_string(op.n()));
  }
  if (!y.allFinite()) throw InvalidInput("observation vector has non-finite entries");
}

inline double data_fit(const SamplingOperator& op, const Vector& y, const SymMat& s) {
  return (y - op.apply(s)).squaredNorm() / (2.0 * double(op.n()));
}

inline SolverReport make_report(const SamplingOperator& op, const Vector& y, EngineResult&& r) {
  SolverReport rep;
  rep.estimate = inv_svec(r.x);
  rep.objective = data_fit(op, y, rep.estimate);
  rep.penalized_objective = r.value;
  rep.iterations = r.iterations;
  rep.converged = r.converged;
  rep.objective_trace = std::move(r.trace);
  rep.fixed_point_residual = r.fixed_point_residual;
  rep.restarts = r.restarts;
  return rep;
}

template <typename Prox, typename Penalty>
SolverReport run_composite(const SamplingOperator& op, const Vector& y, Prox&& prox,
                           Penalty&& penalty, const SolverConfig& cfg) {
  check_observations(op, y);
  const LeastSquaresTerm f{op.design(), y, 1.0};
  EngineResult r = accelerated_prox_gradient(f, prox, penalty, Vector::Zero(op.svec_dim()),
                                             lipschitz_estimate(op), cfg);
  return make_report(op, y, std::move(r));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimators

inline SolverReport solve_cls(const SamplingOperator& op, const Vector& y,
                              const SolverConfig& cfg = {}) {
  return detail::run_composite(
      op, y, [](const Vector& v, double) { return svec_proj_psd(v); },
      [](const Vector&) { return 0.0; }, cfg);
}

/// Minimum-Frobenius-norm least squares solution over S^m.
inline SolverReport solve_ols(const SamplingOperator& op, const Vector& y) {
  detail::check_observations(op, y);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(op.design());
  SolverReport rep;
  rep.estimate = inv_svec(Vector(cod.solve(y)));
  rep.objective = detail::data_fit(op, y, rep.estimate);
  rep.penalized_objective = rep.objective;
  rep.iterations = 1;
  rep.converged = true;
  rep.objective_trace = {rep.objective};
  return rep;
}

inline SolverReport solve_nucreg(const SamplingOperator& op, const Vector& y, double lambda,
                                 const SolverConfig& cfg = {}) {
  if (!(lambda >= 0)) throw InvalidInput("solve_nucreg: lambda must be >= 0");
  return detail::run_composite(
      op, y, [lambda](const Vector& v, double step) { return svec_soft_threshold(v, lambda * step); },
      [lambda](const Vector& x) { return lambda * nuclear_norm(inv_svec(x)); }, cfg);
}

inline SolverReport solve_psd_tracereg(const SamplingOperator& op, const Vector& y, double lambda,
                                       const SolverConfig& cfg = {}) {
  if (!(lambda >= 0)) throw InvalidInput("solve_psd_tracereg: lambda must be >= 0");
  return detail::run_composite(
      op, y, [lambda](const Vector& v, double step) { return svec_shift_clip(v, lambda * step); },
      [lambda](const Vector& x) { return lambda * inv_svec(x).trace(); }, cfg);
}

/// Spiked variant: the returned estimate is S-hat; the covariance estimate is
/// S-hat + sigma_sq I.
inline SolverReport solve_spiked(const SamplingOperator& op, const Vector& y, double sigma_sq,
                                 const SolverConfig& cfg = {}) {
  if (!(sigma_sq >= 0)) throw InvalidInput("solve_spiked: sigma_sq must be >= 0");
  detail::check_observations(op, y);
  const Vector shifted = y - sigma_sq * op.apply(SymMat::identity(op.dim_m()));
  return solve_cls(op, shifted, cfg);
}

// ---------------------------------------------------------------------------
// Constrained trace minimization by ADMM on X(S) + z = y, ||z||_1 <= lambda.

struct ChenConfig {
  int max_outer = 20000;
  int inner_iters = 2000;
  double feasibility_tol = 1e-6;  // relative to 1 + ||y||_1
  double dual_tol = 1e-6;
  int stall_window = 500;
};

inline SolverReport solve_chen(const SamplingOperator& op, const Vector& y, double lambda,
                               const SolverConfig& cfg = {}, const ChenConfig& admm = {}) {
  if (!(lambda >= 0)) throw InvalidInput("solve_chen: lambda must be >= 0");
  detail::check_observations(op, y);
  cfg.validate();
  const long n = op.n();
  const double y_l1 = y.lpNorm<1>();
  if (lambda >= y_l1) {
    // Zero is feasible and has the smallest possible trace.
    SolverReport rep;
    rep.estimate = SymMat::zero(op.dim_m());
    rep.objective = detail::data_fit(op, y, rep.estimate);
    rep.converged = true;
    rep.objective_trace = {0.0};
    return rep;
  }
  const Matrix& d = op.design();
  const double base_lip = lipschitz_estimate(op);
  const double feas_tol = admm.feasibility_tol * (1.0 + y_l1);

  Vector x = Vector::Zero(op.svec_dim());
  Vector z = lambda > 0 ? project_l1_ball(y, lambda) : Vector::Zero(n);
  Vector u = Vector::Zero(n);  // scaled dual
  double rho = 1.0;

  SolverConfig inner = cfg;
  inner.max_iters = admm.inner_iters;
  inner.fixed_point_tol = std::min(cfg.fixed_point_tol, 1e-10);
  inner.rel_obj_tol = std::min(cfg.rel_obj_tol, 1e-14);
  inner.abs_obj_tol = 0.0;

  SolverReport rep;
  double best_primal = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  double prev_trace = 0.0;
  bool converged = false;
  int outer = 0;
  for (outer = 1; outer <= admm.max_outer; ++outer) {
    // S-block: min tr(S) + rho/2 ||D s - (y - z - u)||^2 over PSD, written as
    // (rho n)/(2n) ||c - D s||^2 + tr(S).
    const LeastSquaresTerm f{d, Vector(y - z - u), rho * double(n)};
    EngineResult r = accelerated_prox_gradient(
        f, [](const Vector& v, double step) { return svec_shift_clip(v, step); },
        [](const Vector& s) { return inv_svec(s).trace(); }, x, rho * double(n) * base_lip,
        inner);
    x = std::move(r.x);
    const Vector dx = d * x;
    // z-block: exact projection onto the l1 ball.
    const Vector z_old = z;
    const Vector target = y - dx - u;
    z = lambda > 0 ? project_l1_ball(target, lambda) : Vector::Zero(n);
    const Vector primal = dx + z - y;
    u += primal;
    const double r_norm = primal.lpNorm<1>();
    const double s_norm = rho * (d.transpose() * (z - z_old)).norm();
    const double tr = inv_svec(x).trace();
    rep.objective_trace.push_back(tr);

    if (r_norm < best_primal * (1.0 - 1e-3)) {
      best_primal = r_norm;
      since_improvement = 0;
    } else if (++since_improvement >= admm.stall_window && r_norm > feas_tol) {
      break;
    }
    const double violation = std::max(0.0, (y - dx).lpNorm<1>() - lambda);
    const double trace_change = std::abs(tr - prev_trace);
    prev_trace = tr;
    if (violation <= feas_tol && r_norm <= feas_tol && s_norm <= admm.dual_tol * (1.0 + std::abs(tr)) &&
        trace_change <= 1e-7 * (1.0 + std::abs(tr))) {
      converged = true;
      break;
    }
    // Residual balancing.
    const double r2 = primal.norm();
    if (r2 > 10.0 * s_norm) {
      rho *= 2.0;
      u /= 2.0;
    } else if (s_norm > 10.0 * r2) {
      rho /= 2.0;
      u *= 2.0;
    }
  }
  rep.estimate = inv_svec(x);
  rep.objective = detail::data_fit(op, y, rep.estimate);
  rep.penalized_objective = rep.estimate.trace();
  rep.iterations = std::min(outer, admm.max_outer);
  rep.converged = converged;
  rep.fixed_point_residual = best_primal;
  return rep;
}

}  // namespace spdls
