#pragma once

// Simulation protocols: the tau^2(T) phase sweep and its model fit, the
// estimator comparison, spiked covariance recovery, and the negative-control
// checks. Every replication draws from its own child stream of the run seed,
// so tables do not depend on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spdls/data.hpp"
#include "spdls/geometry.hpp"
#include "spdls/rng.hpp"
#include "spdls/sampling.hpp"
#include "spdls/solvers.hpp"
#include "spdls/symmat.hpp"

namespace spdls {

// ---------------------------------------------------------------------------
// Worker pool

/// Runs task(i) for i in [0, count) on `threads` workers and returns the
/// results in index order.
template <typename Task>
auto parallel_map(long count, int threads, Task&& task) -> std::vector<decltype(task(0L))> {
  using Result = decltype(task(0L));
  std::vector<std::optional<Result>> slots(static_cast<std::size_t>(count));
  std::atomic<long> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (long i = next++; i < count; i = next++) {
      try {
        slots[std::size_t(i)].emplace(task(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(threads, int(std::max<long>(count, 1))));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(k));
    for (int t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<Result> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Audit of ||Delta^-||_1 <= ||Sigma*||_1 for PSD estimates of PSD targets

class LemmaAudit {
 public:
  static LemmaAudit& global() {
    static LemmaAudit audit;
    return audit;
  }

  /// Returns the excess ||Delta^-||_1 - ||target||_1 and records it.
  double record(const SymMat& estimate, const SymMat& target) {
    const auto [pos, neg] = pos_neg_parts(estimate - target);
    const double excess = nuclear_norm(neg) - nuclear_norm(target);
    std::lock_guard<std::mutex> lock(mutex_);
    ++checks_;
    if (excess > 1e-6) ++violations_;
    max_excess_ = std::max(max_excess_, excess);
    return excess;
  }

  long checks() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return checks_;
  }
  long violations() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return violations_;
  }
  double max_excess() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return max_excess_;
  }
  void reset() {
    std::lock_guard<std::mutex> lock(mutex_);
    checks_ = 0;
    violations_ = 0;
    max_excess_ = -std::numeric_limits<double>::infinity();
  }

 private:
  mutable std::mutex mutex_;
  long checks_ = 0;
  long violations_ = 0;
  double max_excess_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Random instances

/// U_par spans the column space of an m x r Gaussian matrix; resampled from
/// the next child stream while sigma_min < 1e-10.
inline Subspace gen_subspace_T(long m, long r, RngSeed seed) {
  if (r < 1 || r >= m) {
    throw InvalidInput("gen_subspace_T: need 1 <= r < m, got r=" + std::to_string(r) + ", m=" +
                       std::to_string(m));
  }
  for (std::uint64_t attempt = 0;; ++attempt) {
    NormalStream normals(seed.child(attempt));
    const Matrix g = normals.matrix(m, r);
    Eigen::JacobiSVD<Matrix> svd(g);
    if (svd.singularValues().minCoeff() < 1e-10) continue;
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = Matrix(qr.householderQ()).leftCols(r);
    // Fix column signs so that R has a positive diagonal.
    const Matrix rr = qr.matrixQR().topLeftCorner(r, r);
    for (long j = 0; j < r; ++j)
      if (rr(j, j) < 0) q.col(j) = -q.col(j);
    return Subspace(q);
  }
}

/// Sum of r Wishart summands of order q, each (1/q) sum_k w_k w_k^T with
/// standard Gaussian w_k. q = 1 gives rank exactly r.
inline SymMat gen_low_rank_target(long m, long r, RngSeed seed, long q = 1) {
  if (r < 1 || r > m) throw InvalidInput("gen_low_rank_target: need 1 <= r <= m");
  if (q < 1) throw InvalidInput("gen_low_rank_target: q must be >= 1");
  NormalStream normals(seed);
  const Matrix w = normals.matrix(m, r * q) / std::sqrt(double(q));
  return SymMat(Matrix(w * w.transpose()));
}

/// k equally spaced points from a to b inclusive.
inline std::vector<double> linspace(double a, double b, int k) {
  if (k < 1) throw InvalidInput("linspace: need at least one point");
  std::vector<double> out(std::size_t(k), a);
  for (int i = 1; i < k; ++i) out[std::size_t(i)] = a + (b - a) * double(i) / double(k - 1);
  if (k > 1) out.back() = b;
  return out;
}

/// sum_j spikes_j u_j u_j^T + sigma_sq I for a uniformly random orthonormal r-frame.
inline SymMat gen_spiked_target(long m, long r, const std::vector<double>& spikes,
                                double sigma_sq, RngSeed seed) {
  if (r < 1 || r > m) throw InvalidInput("gen_spiked_target: need 1 <= r <= m");
  if (long(spikes.size()) != r) throw InvalidInput("gen_spiked_target: need exactly r spikes");
  if (sigma_sq < 0) throw InvalidInput("gen_spiked_target: sigma_sq must be >= 0");
  for (double s : spikes)
    if (!(s > sigma_sq)) throw InvalidInput("gen_spiked_target: spikes must exceed sigma_sq");
  NormalStream normals(seed);
  const Matrix g = normals.matrix(m, r);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = Matrix(qr.householderQ()).leftCols(r);
  const Matrix rr = qr.matrixQR().topLeftCorner(r, r);
  for (long j = 0; j < r; ++j)
    if (rr(j, j) < 0) q.col(j) = -q.col(j);
  const Vector lam = Eigen::Map<const Vector>(spikes.data(), r);
  Matrix s = q * lam.asDiagonal() * q.transpose();
  s.diagonal().array() += sigma_sq;
  return SymMat(s);
}

/// Gaussian rows with covariance `target`.
inline DataMatrix gen_gaussian_rows(const SymMat& target, long rows, RngSeed seed) {
  const EigDecomp e = eig_sym(target);
  const Vector root = e.eigvals.cwiseMax(0.0).cwiseSqrt();
  const Matrix factor = e.eigvecs * root.asDiagonal();
  NormalStream normals(seed);
  DataMatrix d;
  d.rows = normals.matrix(rows, target.dim()) * factor.transpose();
  d.source = "synthetic";
  return d;
}

// ---------------------------------------------------------------------------
// CSV helpers

namespace detail {

inline std::string csv_real(double v) { return format_real(v); }

inline std::string csv_opt(const std::optional<double>& v) { return v ? csv_real(*v) : std::string(); }

inline std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string error_reason(const std::exception& e) { return e.what(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// tau^2(T) phase sweep

struct PhaseSpec {
  std::vector<long> m_list{30};
  std::vector<double> alpha_grid = linspace(0.16, 1.1, 10);
  /// Empty means 1..max(1, m/5).
  std::vector<long> r_list;
  int reps = 25;
  long q = 1;
  RngSeed seed{0};
  double quantile = 0.05;
  double zero_threshold = kEffectiveZero;

  std::vector<long> ranks_for(long m) const {
    if (!r_list.empty()) return r_list;
    std::vector<long> out;
    for (long r = 1; r <= std::max<long>(1, m / 5); ++r) out.push_back(r);
    return out;
  }

  void validate() const {
    if (m_list.empty() || alpha_grid.empty()) throw InvalidInput("PhaseSpec: grids must be non-empty");
    if (reps < 1) throw InvalidInput("PhaseSpec: reps must be >= 1");
    if (q < 1) throw InvalidInput("PhaseSpec: q must be >= 1");
    if (!(quantile > 0 && quantile < 1)) throw InvalidInput("PhaseSpec: quantile must lie in (0, 1)");
    for (double a : alpha_grid)
      if (!(a > 0 && a <= 1.2)) throw InvalidInput("PhaseSpec: alpha values must lie in (0, 1.2]");
    for (long m : m_list) {
      if (m < 2) throw InvalidInput("PhaseSpec: m must be >= 2");
      for (long r : ranks_for(m))
        if (r < 1 || r >= m) throw InvalidInput("PhaseSpec: ranks must satisfy 1 <= r < m");
      for (double a : alpha_grid)
        if (std::lround(a * double(triangular_size(m))) < 1) throw InvalidInput("PhaseSpec: n rounds to 0");
    }
  }
};

struct PhaseRecord {
  long m = 0;
  long n = 0;
  double alpha = 0.0;
  long r = 0;
  int rep = 0;
  std::optional<double> tau_sq_T;
  std::string reason;
};

inline std::vector<PhaseRecord> run_tau_phase(const PhaseSpec& proto, int threads = 1) {
  proto.validate();
  struct Cell {
    long m;
    double alpha;
    long r;
    int rep;
  };
  std::vector<Cell> cells;
  for (long m : proto.m_list)
    for (double a : proto.alpha_grid)
      for (long r : proto.ranks_for(m))
        for (int rep = 0; rep < proto.reps; ++rep) cells.push_back({m, a, r, rep});
  return parallel_map(long(cells.size()), threads, [&](long i) {
    const Cell& c = cells[std::size_t(i)];
    PhaseRecord rec{c.m, std::lround(c.alpha * double(triangular_size(c.m))), c.alpha, c.r, c.rep, {}, {}};
    const RngSeed s = proto.seed.child(std::uint64_t(i));
    try {
      const SamplingOperator op = gen_wishart(c.m, rec.n, proto.q, s.child(0));
      const TauTResult t = tau_sq_T(op, gen_subspace_T(c.m, c.r, s.child(1)));
      rec.tau_sq_T = t.value;
      if (!t.converged) rec.reason = "iteration limit reached";
    } catch (const std::exception& e) {
      rec.reason = detail::error_reason(e);
    }
    return rec;
  });
}

/// Type-7 sample quantile.
inline double quantile_type7(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidInput("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * p;
  const auto lo = std::size_t(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

struct QuantilePoint {
  long m = 0;
  long n = 0;
  double alpha = 0.0;
  long r = 0;
  double value = 0.0;
};

/// Per-(m, n, r) quantile of the non-missing tau^2(T) values.
inline std::vector<QuantilePoint> phase_quantiles(const std::vector<PhaseRecord>& rows, double p) {
  std::map<std::tuple<long, long, long>, std::pair<double, std::vector<double>>> groups;
  for (const auto& rec : rows) {
    auto& g = groups[{rec.m, rec.n, rec.r}];
    g.first = rec.alpha;
    if (rec.tau_sq_T) g.second.push_back(*rec.tau_sq_T);
  }
  std::vector<QuantilePoint> out;
  for (const auto& [key, g] : groups) {
    if (g.second.empty()) continue;
    out.push_back({std::get<0>(key), std::get<1>(key), g.first, std::get<2>(key), quantile_type7(g.second, p)});
  }
  return out;
}

struct TauModelFit {
  long m = 0;
  long n = 0;
  double alpha = 0.0;
  double phi_mn = 0.0;
  double theta_mn = 0.0;
  double r_squared_log = 0.0;
  long points_used = 0;
  /// Empty for an accepted fit.
  std::string rejection;

  bool accepted() const { return rejection.empty(); }
  double predict(long r) const { return phi_mn * std::max(1.0 / double(r) - theta_mn, 0.0); }
};

namespace detail {

/// Least-squares fit of log y = log phi + log(1/r - theta) with theta kept
/// in (0, 1/r_max): grid start, then damped Gauss-Newton in (log phi, theta).
inline void fit_log_model(const std::vector<double>& r, const std::vector<double>& logy,
                          TauModelFit& fit) {
  const double rmax = *std::max_element(r.begin(), r.end());
  const double upper = 1.0 / rmax;
  const double lower = 0.0;
  const double eps = 1e-12 * upper;
  auto best_logphi = [&](double theta) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += logy[i] - std::log(1.0 / r[i] - theta);
    return s / double(r.size());
  };
  auto sse = [&](double lphi, double theta) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double e = logy[i] - lphi - std::log(1.0 / r[i] - theta);
      s += e * e;
    }
    return s;
  };
  double theta = lower + eps;
  double lphi = best_logphi(theta);
  double best = sse(lphi, theta);
  constexpr int kGrid = 400;
  for (int k = 1; k < kGrid; ++k) {
    const double t = lower + (upper - lower) * double(k) / kGrid;
    const double lp = best_logphi(t);
    const double v = sse(lp, t);
    if (v < best) {
      best = v;
      theta = t;
      lphi = lp;
    }
  }
  double damping = 1e-3;
  for (int it = 0; it < 500; ++it) {
    // Residual e_i = logy_i - lphi - log(1/r_i - theta); Jacobian of the model.
    Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
    Eigen::Vector2d jte = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double gap = 1.0 / r[i] - theta;
      const double e = logy[i] - lphi - std::log(gap);
      const Eigen::Vector2d j(1.0, -1.0 / gap);
      jtj += j * j.transpose();
      jte += j * e;
    }
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt) {
      Eigen::Matrix2d a = jtj;
      a.diagonal() *= 1.0 + damping;
      const Eigen::Vector2d step = a.ldlt().solve(jte);
      const double t_new = std::clamp(theta + step(1), lower + eps, upper - eps);
      const double lp_new = lphi + step(0);
      const double v = sse(lp_new, t_new);
      if (std::isfinite(v) && v <= best) {
        const double drop = best - v;
        theta = t_new;
        lphi = lp_new;
        best = v;
        damping = std::max(damping / 3.0, 1e-12);
        improved = drop > 1e-30;
        break;
      }
      damping *= 4.0;
    }
    if (!improved) break;
  }
  double mean = 0.0;
  for (double v : logy) mean += v;
  mean /= double(logy.size());
  double sst = 0.0;
  for (double v : logy) sst += (v - mean) * (v - mean);
  fit.phi_mn = std::exp(lphi);
  fit.theta_mn = theta;
  fit.r_squared_log = sst > 0 ? 1.0 - best / sst : (best <= 1e-24 ? 1.0 : 0.0);
  fit.points_used = long(r.size());
}

}  // namespace detail

/// Fits tau^2(T) ~ phi max(1/r - theta, 0) per (m, n) on the quantile curve,
/// using only quantiles above zero_threshold.
inline std::vector<TauModelFit> fit_tau_model(const std::vector<PhaseRecord>& rows,
                                              double zero_threshold = kEffectiveZero,
                                              double quantile = 0.05) {
  std::map<std::pair<long, long>, std::vector<QuantilePoint>> curves;
  for (const auto& p : phase_quantiles(rows, quantile)) curves[{p.m, p.n}].push_back(p);
  std::vector<TauModelFit> fits;
  for (const auto& [key, pts] : curves) {
    TauModelFit fit;
    fit.m = key.first;
    fit.n = key.second;
    fit.alpha = pts.front().alpha;
    std::vector<double> r;
    std::vector<double> logy;
    for (const auto& p : pts) {
      if (p.value > zero_threshold) {
        r.push_back(double(p.r));
        logy.push_back(std::log(p.value));
      }
    }
    fit.points_used = long(r.size());
    if (r.size() < 3) {
      fit.rejection = "fewer than 3 usable points (" + std::to_string(r.size()) + ")";
    } else {
      detail::fit_log_model(r, logy, fit);
    }
    fits.push_back(fit);
  }
  return fits;
}

// ---------------------------------------------------------------------------
// Estimator comparison

struct CompareSpec {
  long m = 20;
  std::vector<long> n_grid{84};
  std::vector<long> r_grid{1, 3};
  double sigma = 0.1;
  int reps = 25;
  std::vector<double> lambda_grid_factors{0.01, 0.05, 0.1, 0.3, 0.5, 1, 2, 4, 8, 16};
  std::vector<double> chen_grid_factors{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.25};
  bool include_chen = true;
  /// Wishart order of each target summand.
  long target_q = 1;
  RngSeed seed{0};
  SolverConfig solver{};

  void validate() const {
    if (m < 2) throw InvalidInput("CompareSpec: m must be >= 2");
    if (n_grid.empty() || r_grid.empty()) throw InvalidInput("CompareSpec: grids must be non-empty");
    for (long n : n_grid)
      if (n < 1) throw InvalidInput("CompareSpec: n must be >= 1");
    for (long r : r_grid)
      if (r < 1 || r > m) throw InvalidInput("CompareSpec: ranks must satisfy 1 <= r <= m");
    if (!(sigma > 0)) throw InvalidInput("CompareSpec: sigma must be positive");
    if (reps < 1) throw InvalidInput("CompareSpec: reps must be >= 1");
    if (target_q < 1) throw InvalidInput("CompareSpec: target_q must be >= 1");
    if (lambda_grid_factors.empty() || (include_chen && chen_grid_factors.empty())) {
      throw InvalidInput("CompareSpec: tuning grids must be non-empty");
    }
    solver.validate();
  }
};

struct CompareRecord {
  long n = 0;
  long r = 0;
  int rep = 0;
  std::string method;
  std::optional<double> nuclear_error;
  std::optional<double> tuned_lambda;
  std::string reason;
};

inline std::vector<CompareRecord> run_estimator_comparison(const CompareSpec& proto, int threads = 1) {
  proto.validate();
  struct Cell {
    long n;
    long r;
    int rep;
  };
  std::vector<Cell> cells;
  for (long n : proto.n_grid)
    for (long r : proto.r_grid)
      for (int rep = 0; rep < proto.reps; ++rep) cells.push_back({n, r, rep});
  auto blocks = parallel_map(long(cells.size()), threads, [&](long i) {
    const Cell& c = cells[std::size_t(i)];
    const RngSeed s = proto.seed.child(std::uint64_t(i));
    std::vector<CompareRecord> out;
    auto add = [&](const std::string& method, std::optional<double> err, std::optional<double> lam,
                   std::string reason = {}) {
      out.push_back({c.n, c.r, c.rep, method, err, lam, std::move(reason)});
    };
    const double m = double(proto.m);
    const double n = double(c.n);
    try {
      const SamplingOperator op = gen_wishart(proto.m, c.n, 1, s.child(0));
      const SymMat target = gen_low_rank_target(proto.m, c.r, s.child(1), proto.target_q);
      const Vector y = op.apply(target) + proto.sigma * NormalStream(s.child(2)).vector(c.n);
      const SamplingOperator val_op = gen_wishart(proto.m, c.n, 1, s.child(3));
      const Vector y_val = val_op.apply(target) + proto.sigma * NormalStream(s.child(4)).vector(c.n);
      auto err = [&](const SymMat& est) { return nuclear_norm(est - target); };
      auto val_err = [&](const SymMat& est) { return (y_val - val_op.apply(est)).squaredNorm(); };

      const SolverReport cls = solve_cls(op, y, proto.solver);
      LemmaAudit::global().record(cls.estimate, target);
      add("cls", err(cls.estimate), std::nullopt, cls.converged ? "" : "iteration limit reached");

      const double lam_star = proto.sigma * std::sqrt(m / n);
      double best_val = std::numeric_limits<double>::infinity();
      double best_oracle = std::numeric_limits<double>::infinity();
      double val_choice_err = 0.0, val_lambda = 0.0, oracle_lambda = 0.0;
      for (double f : proto.lambda_grid_factors) {
        const double lam = lam_star * f;
        const SolverReport rep = solve_psd_tracereg(op, y, lam, proto.solver);
        LemmaAudit::global().record(rep.estimate, target);
        const double e = err(rep.estimate);
        const double v = val_err(rep.estimate);
        if (v < best_val) {
          best_val = v;
          val_choice_err = e;
          val_lambda = lam;
        }
        if (e < best_oracle) {
          best_oracle = e;
          oracle_lambda = lam;
        }
      }
      add("psd_tracereg_validation", val_choice_err, val_lambda);
      add("psd_tracereg_oracle", best_oracle, oracle_lambda);

      if (proto.include_chen) {
        const double base = n * proto.sigma * std::sqrt(2.0 / M_PI);
        double best = std::numeric_limits<double>::infinity();
        double chosen_err = 0.0, chosen_lambda = 0.0;
        int failures = 0;
        for (double f : proto.chen_grid_factors) {
          const double lam = base * f;
          const SolverReport rep = solve_chen(op, y, lam);
          if (!rep.converged) {
            ++failures;
            continue;
          }
          LemmaAudit::global().record(rep.estimate, target);
          const double v = val_err(rep.estimate);
          if (v < best) {
            best = v;
            chosen_err = err(rep.estimate);
            chosen_lambda = lam;
          }
        }
        if (std::isfinite(best)) {
          add("chen_validation", chosen_err, chosen_lambda,
              failures ? std::to_string(failures) + " grid points did not converge" : "");
        } else {
          add("chen_validation", std::nullopt, std::nullopt, "no grid point converged");
        }
      }

      add("ols", err(solve_ols(op, y).estimate), std::nullopt);
      add("oracle_ref", proto.sigma * double(c.r) * std::sqrt(m / n), std::nullopt);
    } catch (const std::exception& e) {
      add("failed", std::nullopt, std::nullopt, detail::error_reason(e));
    }
    return out;
  });
  std::vector<CompareRecord> rows;
  for (auto& b : blocks)
    for (auto& rec : b) rows.push_back(std::move(rec));
  return rows;
}

// ---------------------------------------------------------------------------
// Spiked covariance recovery

struct SpikedSpec {
  SymMat target;
  long r = 1;
  std::vector<double> c_grid{0.25, 0.5, 1, 2, 4, 6, 8, 12};
  std::vector<double> beta_grid{1.0};
  int reps = 5;
  double sigma_sq = 0.0;
  RngSeed seed{0};
  CovMode mode = CovMode::Covariance;
  /// Rows drawn from N(0, target) when resampling is requested without data.
  long synthetic_rows = 2000;
  SolverConfig solver{};

  void validate(long data_rows) const {
    const long m = target.dim();
    if (m < 1) throw InvalidInput("SpikedSpec: target is empty");
    if (r < 1 || r > m) throw InvalidInput("SpikedSpec: need 1 <= r <= m");
    if (c_grid.empty() || beta_grid.empty()) throw InvalidInput("SpikedSpec: grids must be non-empty");
    for (double c : c_grid)
      if (!(c > 0)) throw InvalidInput("SpikedSpec: C values must be positive");
    for (double b : beta_grid) {
      if (!(b > 0 && b <= 1)) throw InvalidInput("SpikedSpec: beta values must lie in (0, 1]");
      if (b < 1 && std::ceil(b * double(data_rows)) < 1) {
        throw InvalidInput("SpikedSpec: beta * N must give at least one row");
      }
    }
    if (reps < 1) throw InvalidInput("SpikedSpec: reps must be >= 1");
    if (sigma_sq < 0) throw InvalidInput("SpikedSpec: sigma_sq must be >= 0");
    solver.validate();
  }
};

struct SpikedRecord {
  double c = 0.0;
  double beta = 0.0;
  int rep = 0;
  long n = 0;
  std::optional<double> frob_error;
  /// +inf when the target has rank <= r.
  std::optional<double> ratio_to_rank_r;
  std::string reason;
};

/// ||Sigma_r - Sigma||_F for the best rank-r approximation Sigma_r.
inline double rank_r_floor(const SymMat& target, long r) {
  const EigDecomp e = eig_sym(target);
  Vector tail = e.eigvals;
  tail.head(std::min<long>(r, tail.size())).setZero();
  return tail.norm();
}

namespace detail {

/// Prepared rows for bootstrap resampling: centred at the full-sample mean
/// and, for correlations, scaled by the full-sample standard deviations.
inline Matrix bootstrap_basis(const DataMatrix& data, CovMode mode) {
  const Vector mean = data.rows.colwise().mean().transpose();
  Matrix z = data.rows.rowwise() - mean.transpose();
  if (mode == CovMode::Correlation) {
    for (long j = 0; j < z.cols(); ++j) {
      const double sd = std::sqrt(z.col(j).squaredNorm() / double(z.rows()));
      if (!(sd > 0)) throw InvalidInput("column " + std::to_string(j + 1) + " has zero variance");
      z.col(j) /= sd;
    }
  }
  return z;
}

}  // namespace detail

inline std::vector<SpikedRecord> run_spiked(const SpikedSpec& proto,
                                            const std::optional<DataMatrix>& data = std::nullopt,
                                            int threads = 1) {
  const long m = proto.target.dim();
  const bool resample = std::any_of(proto.beta_grid.begin(), proto.beta_grid.end(),
                                    [](double b) { return b < 1.0; });
  std::optional<DataMatrix> rows = data;
  if (!rows && resample) {
    rows = gen_gaussian_rows(proto.target, proto.synthetic_rows, proto.seed.child(0xD47A));
  }
  proto.validate(rows ? rows->n_obs() : 0);
  if (rows && rows->dim_m() != m) {
    throw InvalidInput("run_spiked: data has " + std::to_string(rows->dim_m()) +
                       " columns, target has m=" + std::to_string(m));
  }
  const Matrix basis = rows ? detail::bootstrap_basis(*rows, proto.mode) : Matrix();
  // beta = 1: the full-sample matrix when data are given, the target itself otherwise.
  const SymMat full = data ? sample_covariance(*data, proto.mode) : proto.target;
  const double floor = rank_r_floor(proto.target, proto.r);
  const bool degenerate = floor <= 1e-12 * std::max(1.0, proto.target.frobenius_norm());

  struct Cell {
    double c;
    double beta;
    int rep;
  };
  std::vector<Cell> cells;
  for (double c : proto.c_grid)
    for (double b : proto.beta_grid)
      for (int rep = 0; rep < proto.reps; ++rep) cells.push_back({c, b, rep});

  return parallel_map(long(cells.size()), threads, [&](long i) {
    const Cell& cell = cells[std::size_t(i)];
    SpikedRecord rec;
    rec.c = cell.c;
    rec.beta = cell.beta;
    rec.rep = cell.rep;
    rec.n = std::max<long>(1, std::lround(cell.c * double(m * proto.r)));
    const RngSeed s = proto.seed.child(std::uint64_t(i));
    try {
      const SamplingOperator op = gen_wishart(m, rec.n, 1, s.child(0));
      Vector y(rec.n);
      if (cell.beta >= 1.0) {
        y = op.apply(full);
      } else {
        const long big_n = basis.rows();
        const long k = long(std::ceil(cell.beta * double(big_n)));
        std::mt19937_64 eng = s.child(1).engine();
        std::uniform_int_distribution<long> pick(0, big_n - 1);
        Matrix sub(k, m);
        for (long i2 = 0; i2 < rec.n; ++i2) {
          for (long j = 0; j < k; ++j) sub.row(j) = basis.row(pick(eng));
          const Matrix si = sub.transpose() * sub / double(k);
          y(i2) = op.design().row(i2).dot(svec_coords(si));
        }
      }
      const SolverReport rep = solve_spiked(op, y, proto.sigma_sq, proto.solver);
      SymMat est = rep.estimate;
      if (proto.sigma_sq > 0) est = est + proto.sigma_sq * SymMat::identity(m);
      LemmaAudit::global().record(est, proto.target);
      rec.frob_error = (est - proto.target).frobenius_norm();
      rec.ratio_to_rank_r = degenerate ? std::numeric_limits<double>::infinity() : *rec.frob_error / floor;
      if (!rep.converged) rec.reason = "iteration limit reached";
    } catch (const std::exception& e) {
      rec.reason = detail::error_reason(e);
    }
    return rec;
  });
}

// ---------------------------------------------------------------------------
// Negative-control checks

struct OrthonormalLimitResult {
  double mean_prediction = 0.0;
  /// Largest ||iterative - closed form||_F over replications.
  double max_closed_form_gap = 0.0;
};

/// Orthonormal design, Sigma* = 0, N(0, sigma^2) noise: mean of
/// (1/n)||X(Sigma_hat)||^2, which tends to sigma^2 / 2.
inline OrthonormalLimitResult check_orthonormal_limit(long m, double sigma, int reps, RngSeed seed,
                                                      const SolverConfig& cfg = {}) {
  if (m < 10) throw InvalidInput("check_orthonormal_limit: m must be >= 10");
  if (reps < 1) throw InvalidInput("check_orthonormal_limit: reps must be >= 1");
  if (sigma < 0) throw InvalidInput("check_orthonormal_limit: sigma must be >= 0");
  const SamplingOperator op = gen_orthonormal_basis_design(m);
  const SymMat zero = SymMat::zero(m);
  OrthonormalLimitResult out;
  for (int k = 0; k < reps; ++k) {
    const Vector eps = sigma * NormalStream(seed.child(std::uint64_t(k))).vector(op.n());
    const SolverReport rep = solve_cls(op, eps, cfg);
    LemmaAudit::global().record(rep.estimate, zero);
    out.mean_prediction += op.apply(rep.estimate).squaredNorm() / double(op.n());
    const SymMat closed = proj_psd(op.adjoint(eps));
    out.max_closed_form_gap = std::max(out.max_closed_form_gap, (rep.estimate - closed).frobenius_norm());
  }
  out.mean_prediction /= double(reps);
  return out;
}

/// True iff solve_cls and solve_ols reach the same objective (to 1e-8) on
/// `instances` noisy random problems with operators from `make_op`.
inline bool objectives_agree(const std::function<SamplingOperator(RngSeed)>& make_op, RngSeed seed,
                             int instances, double sigma) {
  SolverConfig cfg;
  cfg.max_iters = 100000;
  cfg.fixed_point_tol = 1e-13;
  cfg.rel_obj_tol = std::numeric_limits<double>::min();
  cfg.abs_obj_tol = 1e-14;
  for (int k = 0; k < instances; ++k) {
    const RngSeed s = seed.child(std::uint64_t(k));
    const SamplingOperator op = make_op(s.child(0));
    NormalStream normals(s.child(1));
    const Matrix g = normals.matrix(op.dim_m(), op.dim_m());
    const SymMat target(Matrix(g * g.transpose()));
    const Vector y = op.apply(target) + sigma * normals.vector(op.n());
    const SolverReport cls = solve_cls(op, y, cfg);
    LemmaAudit::global().record(cls.estimate, target);
    const SolverReport ols = solve_ols(op, y);
    if (std::abs(cls.objective - ols.objective) > 1e-8) return false;
  }
  return true;
}

inline bool check_block_design_vacuous(long m, long n, RngSeed seed, int instances = 5,
                                       double sigma = 1.0) {
  if (m < 2 || m % 2 != 0) throw InvalidInput("check_block_design_vacuous: m must be even");
  return objectives_agree([m, n](RngSeed s) { return gen_block_design(m, n, s); }, seed, instances,
                          sigma);
}

/// Number of GOE trials (m, n) with tau0^2 <= kEffectiveZero.
inline int count_tau0_zero(long m, long n, int trials, RngSeed seed) {
  if (trials < 1) throw InvalidInput("count_tau0_zero: trials must be >= 1");
  const auto zero = parallel_map(trials, 1, [&](long k) {
    return tau0_sq(gen_goe(m, n, seed.child(std::uint64_t(k)))).value <= kEffectiveZero;
  });
  return int(std::count(zero.begin(), zero.end(), true));
}

/// Tolerances for noiseless recovery, where only the data fit remains.
inline SolverConfig recovery_config() {
  SolverConfig cfg;
  cfg.max_iters = 100000;
  cfg.fixed_point_tol = 1e-12;
  cfg.rel_obj_tol = std::numeric_limits<double>::min();
  cfg.abs_obj_tol = 1e-26;
  return cfg;
}

struct RecoveryTrial {
  double relative_error = 0.0;  ///< ||Sigma_hat - Sigma*||_F / ||Sigma*||_F
  double tau_sq_T = 0.0;
  double phi_sq_T_certified = 0.0;
};

/// Noiseless CLS recovery of a rank-r Wishart target from n Wishart q=1
/// measurements, with the separability constants of its tangent space.
inline RecoveryTrial noiseless_recovery_trial(long m, long r, long n, RngSeed seed) {
  const SamplingOperator op = gen_wishart(m, n, 1, seed.child(0));
  const SymMat target = gen_low_rank_target(m, r, seed.child(1));
  const SolverReport rep = solve_cls(op, op.apply(target), recovery_config());
  LemmaAudit::global().record(rep.estimate, target);
  const EigDecomp e = eig_sym(target);
  const Subspace t(Matrix(e.eigvecs.rightCols(r)));
  const RotatedDesign rd = rotate_design(op, t);
  RecoveryTrial out;
  out.relative_error = (rep.estimate - target).frobenius_norm() / target.frobenius_norm();
  out.tau_sq_T = tau_sq_T(rd).value;
  out.phi_sq_T_certified = phi_sq_T(rd, 1, seed.child(2)).certified_lower;
  return out;
}

/// Relative Frobenius error of noiseless CLS on the block design for a
/// full-rank random PSD target.
inline double block_design_recovery_error(long m, long n, RngSeed seed) {
  const SamplingOperator op = gen_block_design(m, n, seed.child(0));
  const Matrix g = NormalStream(seed.child(1)).matrix(m, m);
  const SymMat target(Matrix(g * g.transpose()));
  const SolverReport rep = solve_cls(op, op.apply(target), recovery_config());
  LemmaAudit::global().record(rep.estimate, target);
  return (rep.estimate - target).frobenius_norm() / target.frobenius_norm();
}

// ---------------------------------------------------------------------------
// Slow-rate bound on one noisy instance

struct SlowRateDraw {
  double prediction_error = 0.0;  ///< (1/n)||X(Sigma_hat - Sigma*)||^2
  double lambda0 = 0.0;
  /// Absent when the uniform vector does not certify the constants.
  std::optional<double> bound;
  double lambda0_bound = 0.0;
  double vn_sq = 0.0;
  double vn_sq_ceiling = 0.0;
};

/// Wishart q=1 operator, rank-r target and N(0, sigma^2) noise from `seed`;
/// constants from a = 1/sqrt(n) and zeta = 2.
inline SlowRateDraw slow_rate_draw(long m, long n, long r, double sigma, RngSeed seed,
                                   const SolverConfig& cfg = {}) {
  const SamplingOperator op = gen_wishart(m, n, 1, seed.child(0));
  const SymMat target = gen_low_rank_target(m, r, seed.child(1));
  const Vector eps = sigma * NormalStream(seed.child(2)).vector(n);
  const SolverReport rep = solve_cls(op, op.apply(target) + eps, cfg);
  LemmaAudit::global().record(rep.estimate, target);
  SlowRateDraw out;
  out.prediction_error = op.apply(rep.estimate - target).squaredNorm() / double(n);
  out.lambda0 = lambda0(op, eps);
  const Vector a = Vector::Constant(n, 1.0 / std::sqrt(double(n)));
  if (const auto c = check_prop3(op, a, 2.0)) {
    out.bound = slow_rate_bound(nuclear_norm(target), out.lambda0, c->R_star, c->tau_star_sq);
  }
  const Lambda0Bound lb = lambda0_bound(op, sigma, 1.0);
  out.lambda0_bound = lb.bound;
  out.vn_sq = lb.vn_sq;
  out.vn_sq_ceiling = *lb.wishart_ceiling;
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_phase_csv(std::ostream& os, const std::vector<PhaseRecord>& rows) {
  os << "m,n,alpha,r,rep,tau_sq_T,reason\n";
  for (const auto& r : rows) {
    os << r.m << ',' << r.n << ',' << detail::csv_real(r.alpha) << ',' << r.r << ',' << r.rep << ','
       << detail::csv_opt(r.tau_sq_T) << ',' << detail::csv_text(r.reason) << '\n';
  }
}

inline void write_fit_csv(std::ostream& os, const std::vector<TauModelFit>& fits,
                          const std::vector<long>& r_values) {
  os << "m,n,alpha,phi_mn,theta_mn,r_squared_log,points_used,reason\n";
  for (const auto& f : fits) {
    const bool ok = f.accepted();
    os << f.m << ',' << f.n << ',' << detail::csv_real(f.alpha) << ','
       << (ok ? detail::csv_real(f.phi_mn) : "") << ',' << (ok ? detail::csv_real(f.theta_mn) : "") << ','
       << (ok ? detail::csv_real(f.r_squared_log) : "") << ',' << f.points_used << ','
       << detail::csv_text(f.rejection) << '\n';
  }
  os << "\nm,n,r,fitted_tau_sq_T\n";
  for (const auto& f : fits) {
    if (!f.accepted()) continue;
    for (long r : r_values) os << f.m << ',' << f.n << ',' << r << ',' << detail::csv_real(f.predict(r)) << '\n';
  }
}

inline void write_compare_csv(std::ostream& os, const std::vector<CompareRecord>& rows) {
  os << "n,r,rep,method,nuclear_error,tuned_lambda,reason\n";
  for (const auto& r : rows) {
    os << r.n << ',' << r.r << ',' << r.rep << ',' << r.method << ',' << detail::csv_opt(r.nuclear_error)
       << ',' << detail::csv_opt(r.tuned_lambda) << ',' << detail::csv_text(r.reason) << '\n';
  }
}

inline void write_spiked_csv(std::ostream& os, const std::vector<SpikedRecord>& rows) {
  os << "C,beta,rep,n,frob_error,frob_error_relative_to_rank_r,reason\n";
  for (const auto& r : rows) {
    os << detail::csv_real(r.c) << ',' << detail::csv_real(r.beta) << ',' << r.rep << ',' << r.n << ','
       << detail::csv_opt(r.frob_error) << ',' << detail::csv_opt(r.ratio_to_rank_r) << ','
       << detail::csv_text(r.reason) << '\n';
  }
}

/// Median of the values selected by `pick` (missing entries skipped).
template <typename Rows, typename Pick>
double median_of(const Rows& rows, Pick&& pick) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (auto x = pick(r)) v.push_back(*x);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return quantile_type7(std::move(v), 0.5);
}

}  // namespace spdls
