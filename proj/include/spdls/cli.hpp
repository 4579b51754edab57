#pragma once

// Command-line front end. Every subcommand reads its parameters from one
// config section: built-in defaults, then the --config file, then flags
// given on the command line. The effective section is echoed to
// run.manifest next to the outputs.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spdls/data.hpp"
#include "spdls/experiments.hpp"
#include "spdls/geometry.hpp"
#include "spdls/io.hpp"
#include "spdls/sampling.hpp"
#include "spdls/solvers.hpp"

namespace spdls::cli {

struct Param {
  std::string key;
  std::string help;
  bool is_flag = false;
};

struct Context {
  std::filesystem::path out;
  RngSeed seed;
  int threads = 1;
  bool quiet = false;
  std::ostream& os;
};

struct Command {
  std::string name;     ///< config section, e.g. "tau-phase" or "checks.prop1"
  std::string summary;
  std::vector<Param> params;
  std::function<Config::Section(bool full_scale)> defaults;
  std::function<void(const Config& cfg, const std::string& section, Context& ctx)> run;
};

namespace detail {

inline std::string flag_name(const std::string& key) {
  std::string f = "--";
  for (char c : key) f += c == '_' ? '-' : c;
  return f;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  Config c;
  c.set_list("", "x", v);
  return c.get("", "x");
}

inline std::string real(double v) { return spdls::detail::format_real(v); }

inline std::ofstream open_output(const Context& ctx, const std::string& file) {
  ensure_directory(ctx.out);
  std::ofstream f(ctx.out / file);
  if (!f) throw InvalidInput("cannot write " + (ctx.out / file).string());
  return f;
}

inline void say(Context& ctx, const std::string& line) {
  if (!ctx.quiet) ctx.os << line << '\n';
}

/// Every positional-free parameter key must be present after layering.
inline void require(const Config& cfg, const std::string& section, const std::string& key) {
  if (!cfg.has(section, key) || cfg.get(section, key).empty()) {
    throw InvalidInput(section + ": missing required option " + flag_name(key));
  }
}

inline SamplingOperator read_operator_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open operator file " + path);
  return read_operator(in);
}

inline SamplingOperator make_operator(const std::string& ensemble, long m, long n, long q, RngSeed seed) {
  if (ensemble == "goe") return gen_goe(m, n, seed);
  if (ensemble == "wishart") return gen_wishart(m, n, q, seed);
  if (ensemble == "block") return gen_block_design(m, n, seed);
  if (ensemble == "orthonormal") return gen_orthonormal_basis_design(m);
  throw InvalidInput("unknown ensemble '" + ensemble + "' (expected goe, wishart, block or orthonormal)");
}

inline std::string pass_fail(bool ok) { return ok ? "PASS" : "FAIL"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline Command solve_command() {
  Command c;
  c.name = "solve";
  c.summary = "Run one estimator on a serialized operator and observation vector";
  c.params = {{"operator", "operator file (header 'm n', then svec rows)"},
              {"y", "observation file (whitespace-separated reals)"},
              {"estimator", "cls, ols, nucreg, psd_tracereg, spiked or chen"},
              {"lambda", "regularization parameter (nucreg, psd_tracereg, chen)"},
              {"sigma_sq", "known noise variance (spiked)"},
              {"max_iters", "iteration limit"}};
  c.defaults = [](bool) {
    return Config::Section{{"estimator", "cls"}, {"lambda", "0"}, {"sigma_sq", "0"}, {"max_iters", "5000"}};
  };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    detail::require(cfg, s, "operator");
    detail::require(cfg, s, "y");
    const SamplingOperator op = detail::read_operator_file(cfg.get(s, "operator"));
    std::ifstream yin(cfg.get(s, "y"));
    if (!yin) throw InvalidInput("cannot open observation file " + cfg.get(s, "y"));
    const Vector y = read_vector(yin, cfg.get(s, "y"));
    SolverConfig sc;
    sc.max_iters = int(cfg.get_int(s, "max_iters"));
    const std::string est = cfg.get(s, "estimator");
    const double lambda = cfg.get_real(s, "lambda");
    SolverReport rep;
    if (est == "cls") {
      rep = solve_cls(op, y, sc);
    } else if (est == "ols") {
      rep = solve_ols(op, y);
    } else if (est == "nucreg") {
      rep = solve_nucreg(op, y, lambda, sc);
    } else if (est == "psd_tracereg") {
      rep = solve_psd_tracereg(op, y, lambda, sc);
    } else if (est == "spiked") {
      rep = solve_spiked(op, y, cfg.get_real(s, "sigma_sq"), sc);
    } else if (est == "chen") {
      rep = solve_chen(op, y, lambda);
    } else {
      throw InvalidInput("unknown estimator '" + est + "'");
    }
    auto f = detail::open_output(ctx, "estimate.txt");
    write_matrix(f, rep.estimate.matrix());
    auto summary = detail::open_output(ctx, "solve.txt");
    std::ostringstream os;
    os << "estimator " << est << "\nobjective " << detail::real(rep.objective) << "\npenalized_objective "
       << detail::real(rep.penalized_objective) << "\niterations " << rep.iterations << "\nconverged "
       << (rep.converged ? "true" : "false") << "\nfixed_point_residual " << detail::real(rep.fixed_point_residual)
       << '\n';
    summary << os.str();
    if (!ctx.quiet) ctx.os << os.str();
  };
  return c;
}

inline Command constants_command() {
  Command c;
  c.name = "constants";
  c.summary = "Compute the geometric constants of one sampling operator";
  c.params = {{"m", "matrix dimension (required unless --operator is given)"},
              {"n", "number of measurements"},
              {"ensemble", "goe, wishart, block or orthonormal"},
              {"q", "Wishart order"},
              {"operator", "read the operator from this file instead of drawing one"},
              {"rank", "rank of a random subspace T (0: no subspace constants)"},
              {"subspace", "file holding the m x r basis of T"},
              {"sigma", "noise level for lambda0"},
              {"tail_mu", "tail parameter of the lambda0 bound"},
              {"norm1_target", "||Sigma*||_1 used in the slow-rate bound"},
              {"r_grid", "R values for tau^2(X, R)"},
              {"restarts", "restarts of the local searches"}};
  c.defaults = [](bool) {
    return Config::Section{{"ensemble", "goe"}, {"q", "1"},        {"rank", "0"},
                           {"sigma", "1"},      {"tail_mu", "1"},  {"norm1_target", "1"},
                           {"r_grid", "1.5, 2, 4"}, {"restarts", "10"}};
  };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    std::optional<SamplingOperator> op;
    if (cfg.has(s, "operator") && !cfg.get(s, "operator").empty()) {
      op = detail::read_operator_file(cfg.get(s, "operator"));
    } else {
      detail::require(cfg, s, "m");
      detail::require(cfg, s, "n");
      const std::string ens = cfg.get(s, "ensemble");
      op = detail::make_operator(ens, cfg.get_int(s, "m"), cfg.get_int(s, "n"), cfg.get_int(s, "q"), ctx.seed.child(0));
      auto f = detail::open_output(ctx, "operator.txt");
      write_operator(f, *op);
    }
    std::optional<Subspace> t;
    if (cfg.has(s, "subspace") && !cfg.get(s, "subspace").empty()) {
      std::ifstream in(cfg.get(s, "subspace"));
      if (!in) throw InvalidInput("cannot open subspace file " + cfg.get(s, "subspace"));
      const Matrix u = read_matrix(in, cfg.get(s, "subspace"));
      if (u.rows() != op->dim_m()) throw InvalidInput("subspace basis must have m rows");
      t.emplace(u);
    } else if (const long r = cfg.get_int(s, "rank"); r > 0) {
      t = gen_subspace_T(op->dim_m(), r, ctx.seed.child(1));
    }
    GeometryOptions opt;
    opt.R_grid = cfg.get_reals(s, "r_grid");
    opt.sigma = cfg.get_real(s, "sigma");
    opt.tail_mu = cfg.get_real(s, "tail_mu");
    opt.norm1_target = cfg.get_real(s, "norm1_target");
    opt.restarts = int(cfg.get_int(s, "restarts"));
    opt.seed = ctx.seed.child(2);
    const GeometryReport rep = compute_geometry(*op, t ? &*t : nullptr, opt);
    std::ostringstream os;
    write_report(os, rep);
    auto f = detail::open_output(ctx, "constants.txt");
    f << os.str();
    if (!ctx.quiet) ctx.os << os.str();
  };
  return c;
}

inline Command tau_phase_command() {
  Command c;
  c.name = "tau-phase";
  c.summary = "Monte-Carlo sweep of tau^2(T) over (m, n, r)";
  c.params = {{"m_list", "matrix dimensions"},
              {"alpha_grid", "values of n / delta_m"},
              {"r_list", "subspace ranks (empty: 1..m/5)"},
              {"reps", "replications per cell"},
              {"q", "Wishart order"},
              {"quantile", "summary quantile for the model fit"},
              {"zero_threshold", "values at or below this count as zero"},
              {"fit", "also fit the tau^2(T) model and write tau_fit.csv", true}};
  c.defaults = [](bool full) {
    const auto alpha = linspace(0.16, 1.1, full ? 20 : 10);
    return Config::Section{{"m_list", full ? "30, 50, 70, 100" : "30"},
                           {"alpha_grid", detail::join(alpha)},
                           {"r_list", ""},
                           {"reps", full ? "50" : "25"},
                           {"q", "1"},
                           {"quantile", "0.05"},
                           {"zero_threshold", detail::real(kEffectiveZero)},
                           {"fit", "false"}};
  };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    PhaseSpec proto;
    proto.m_list = cfg.get_ints(s, "m_list");
    proto.alpha_grid = cfg.get_reals(s, "alpha_grid");
    proto.r_list = cfg.get_ints(s, "r_list");
    proto.reps = int(cfg.get_int(s, "reps"));
    proto.q = cfg.get_int(s, "q");
    proto.quantile = cfg.get_real(s, "quantile");
    proto.zero_threshold = cfg.get_real(s, "zero_threshold");
    proto.seed = ctx.seed;
    proto.validate();
    const auto rows = run_tau_phase(proto, ctx.threads);
    auto f = detail::open_output(ctx, "tau_phase.csv");
    write_phase_csv(f, rows);
    detail::say(ctx, "wrote " + std::to_string(rows.size()) + " rows to " + (ctx.out / "tau_phase.csv").string());
    if (cfg.get_bool(s, "fit")) {
      const auto fits = fit_tau_model(rows, proto.zero_threshold, proto.quantile);
      std::set<long> ranks;
      for (const auto& r : rows) ranks.insert(r.r);
      auto g = detail::open_output(ctx, "tau_fit.csv");
      write_fit_csv(g, fits, std::vector<long>(ranks.begin(), ranks.end()));
      for (const auto& fit : fits) {
        std::ostringstream os;
        os << "m=" << fit.m << " n=" << fit.n << ": ";
        if (fit.accepted()) {
          os << "phi=" << fit.phi_mn << " theta=" << fit.theta_mn << " R2_log=" << fit.r_squared_log;
        } else {
          os << "rejected (" << fit.rejection << ")";
        }
        detail::say(ctx, os.str());
      }
    }
  };
  return c;
}

inline Command compare_command() {
  Command c;
  c.name = "compare";
  c.summary = "Compare constrained least squares with regularized estimators";
  c.params = {{"m", "matrix dimension"},
              {"n_grid", "numbers of measurements"},
              {"r_grid", "target ranks"},
              {"sigma", "noise standard deviation"},
              {"reps", "replications per cell"},
              {"lambda_factors", "multiples of sigma sqrt(m/n) for trace regularization"},
              {"chen_factors", "multiples of n sigma sqrt(2/pi) for the l1-constrained program"},
              {"chen", "include the l1-constrained trace minimization (true/false)"},
              {"target_q", "Wishart order of each target summand"}};
  c.defaults = [](bool full) {
    CompareSpec d;
    std::vector<long> n_grid{84};
    std::vector<long> r_grid{1, 3};
    if (full) {
      n_grid.clear();
      for (double f : {0.24, 0.26, 0.28, 0.30, 0.32, 0.34, 0.36, 0.40, 0.44, 0.48, 0.52, 0.56})
        n_grid.push_back(std::lround(f * 2500));
      r_grid = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    }
    return Config::Section{{"m", full ? "50" : "20"},
                           {"n_grid", detail::join(n_grid)},
                           {"r_grid", detail::join(r_grid)},
                           {"sigma", "0.1"},
                           {"reps", full ? "50" : "25"},
                           {"lambda_factors", detail::join(d.lambda_grid_factors)},
                           {"chen_factors", detail::join(d.chen_grid_factors)},
                           {"chen", "true"},
                           {"target_q", "1"}};
  };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    CompareSpec proto;
    proto.m = cfg.get_int(s, "m");
    proto.n_grid = cfg.get_ints(s, "n_grid");
    proto.r_grid = cfg.get_ints(s, "r_grid");
    proto.sigma = cfg.get_real(s, "sigma");
    proto.reps = int(cfg.get_int(s, "reps"));
    proto.lambda_grid_factors = cfg.get_reals(s, "lambda_factors");
    proto.chen_grid_factors = cfg.get_reals(s, "chen_factors");
    proto.include_chen = cfg.get_bool(s, "chen");
    proto.target_q = cfg.get_int(s, "target_q");
    proto.seed = ctx.seed;
    proto.validate();
    const auto rows = run_estimator_comparison(proto, ctx.threads);
    auto f = detail::open_output(ctx, "compare.csv");
    write_compare_csv(f, rows);
    std::map<std::tuple<long, long, std::string>, std::vector<const CompareRecord*>> groups;
    std::vector<std::string> order;
    for (const auto& r : rows) {
      if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
      groups[{r.n, r.r, r.method}].push_back(&r);
    }
    for (long n : proto.n_grid)
      for (long r : proto.r_grid)
        for (const auto& m : order) {
          const auto it = groups.find({n, r, m});
          if (it == groups.end()) continue;
          const double med = median_of(it->second, [](const CompareRecord* x) { return x->nuclear_error; });
          detail::say(ctx, "n=" + std::to_string(n) + " r=" + std::to_string(r) + " " + m +
                               " median_nuclear_error=" + detail::real(med));
        }
  };
  return c;
}

inline Command spiked_command() {
  Command c;
  c.name = "spiked";
  c.summary = "Spiked covariance recovery from quadratic measurements";
  c.params = {{"data", "CSV of observations; Sigma* is their sample covariance"},
              {"correlation", "use the sample correlation matrix (with --data)", true},
              {"m", "dimension of the synthetic spiked target"},
              {"spikes", "spike sizes of the synthetic target"},
              {"model_sigma_sq", "noise floor of the synthetic target"},
              {"r", "rank used for n = C m r and the rank-r reference"},
              {"sigma_sq", "known noise variance passed to the estimator"},
              {"c_grid", "values of C = n / (m r)"},
              {"beta_grid", "resampling fractions in (0, 1]"},
              {"reps", "replications per cell"},
              {"synthetic_rows", "rows drawn from N(0, Sigma*) for resampling without --data"}};
  c.defaults = [](bool full) {
    return Config::Section{{"data", ""},
                           {"correlation", "false"},
                           {"m", "20"},
                           {"spikes", "10, 5, 2"},
                           {"model_sigma_sq", "0"},
                           {"r", "3"},
                           {"sigma_sq", "0"},
                           {"c_grid", "0.25, 0.5, 1, 2, 4, 6, 8, 12"},
                           {"beta_grid", full ? "1, 0.4, 0.080000000000000002" : "1"},
                           {"reps", full ? "20" : "5"},
                           {"synthetic_rows", "2000"}};
  };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    SpikedSpec proto;
    proto.r = cfg.get_int(s, "r");
    proto.sigma_sq = cfg.get_real(s, "sigma_sq");
    proto.c_grid = cfg.get_reals(s, "c_grid");
    proto.beta_grid = cfg.get_reals(s, "beta_grid");
    proto.reps = int(cfg.get_int(s, "reps"));
    proto.synthetic_rows = cfg.get_int(s, "synthetic_rows");
    proto.seed = ctx.seed;
    proto.mode = cfg.get_bool(s, "correlation") ? CovMode::Correlation : CovMode::Covariance;
    std::optional<DataMatrix> data;
    if (!cfg.get(s, "data").empty()) {
      data = ingest_csv(cfg.get(s, "data"));
      proto.target = sample_covariance(*data, proto.mode);
    } else {
      const auto spikes = cfg.get_reals(s, "spikes");
      proto.target = gen_spiked_target(cfg.get_int(s, "m"), long(spikes.size()), spikes,
                                      cfg.get_real(s, "model_sigma_sq"), ctx.seed.child(0x5EED));
    }
    const auto rows = run_spiked(proto, data, ctx.threads);
    auto f = detail::open_output(ctx, "spiked.csv");
    write_spiked_csv(f, rows);
    for (double cv : proto.c_grid)
      for (double b : proto.beta_grid) {
        std::vector<const SpikedRecord*> sel;
        for (const auto& r : rows)
          if (r.c == cv && r.beta == b) sel.push_back(&r);
        const double med = median_of(sel, [](const SpikedRecord* x) { return x->frob_error; });
        detail::say(ctx, "C=" + detail::real(cv) + " beta=" + detail::real(b) + " median_frob_error=" + detail::real(med));
      }
  };
  return c;
}

inline Command prop1_command() {
  Command c;
  c.name = "checks.prop1";
  c.summary = "Orthonormal design with pure noise: (1/n)||X(Sigma_hat)||^2 near sigma^2/2";
  c.params = {{"m", "matrix dimension (>= 10)"}, {"sigma", "noise level"}, {"reps", "replications"}};
  c.defaults = [](bool) { return Config::Section{{"sigma", "1"}, {"reps", "20"}}; };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    detail::require(cfg, s, "m");
    const double sigma = cfg.get_real(s, "sigma");
    const auto res = check_orthonormal_limit(cfg.get_int(s, "m"), sigma, int(cfg.get_int(s, "reps")), ctx.seed);
    const double lo = 0.4 * sigma * sigma, hi = 0.6 * sigma * sigma;
    const bool ok = res.mean_prediction >= lo && res.mean_prediction <= hi && res.max_closed_form_gap <= 1e-6;
    std::ostringstream os;
    os << "mean " << detail::real(res.mean_prediction) << "\ninterval [" << detail::real(lo) << ", "
       << detail::real(hi) << "]\nmax_closed_form_gap " << detail::real(res.max_closed_form_gap) << "\nresult "
       << detail::pass_fail(ok) << '\n';
    auto f = detail::open_output(ctx, "prop1.txt");
    f << os.str();
    if (!ctx.quiet) ctx.os << os.str();
  };
  return c;
}

inline Command prop2_command() {
  Command c;
  c.name = "checks.prop2";
  c.summary = "GOE phase transition of tau0^2 at n = delta_m / 2";
  c.params = {{"m", "matrix dimension"},
              {"n_low", "n below delta_m / 2"},
              {"n_high", "n above delta_m / 2"},
              {"trials", "trials per n"}};
  c.defaults = [](bool) { return Config::Section{{"trials", "20"}}; };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    detail::require(cfg, s, "m");
    const long m = cfg.get_int(s, "m");
    const long half = triangular_size(m) / 2;
    const long lo = cfg.has(s, "n_low") ? cfg.get_int(s, "n_low") : std::lround(0.75 * double(half));
    const long hi = cfg.has(s, "n_high") ? cfg.get_int(s, "n_high") : std::lround(1.6 * double(half));
    const int trials = int(cfg.get_int(s, "trials"));
    const int zero_lo = count_tau0_zero(m, lo, trials, ctx.seed.child(0));
    const int zero_hi = count_tau0_zero(m, hi, trials, ctx.seed.child(1));
    const int need = int(std::ceil(0.9 * trials));
    const bool ok = zero_lo >= need && trials - zero_hi >= need;
    std::ostringstream os;
    os << "n_low " << lo << " zero " << zero_lo << '/' << trials << "\nn_high " << hi << " positive "
       << trials - zero_hi << '/' << trials << "\nresult " << detail::pass_fail(ok) << '\n';
    auto f = detail::open_output(ctx, "prop2.txt");
    f << os.str();
    if (!ctx.quiet) ctx.os << os.str();
  };
  return c;
}

inline Command example1_command() {
  Command c;
  c.name = "checks.example1";
  c.summary = "Block design: the PSD constraint is vacuous and recovery fails";
  c.params = {{"m", "even matrix dimension"}, {"n", "number of measurements"}, {"instances", "random instances"}};
  c.defaults = [](bool) { return Config::Section{{"instances", "5"}}; };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    detail::require(cfg, s, "m");
    const long m = cfg.get_int(s, "m");
    const long n = cfg.has(s, "n") ? cfg.get_int(s, "n") : triangular_size(m) / 2;
    const bool vacuous = check_block_design_vacuous(m, n, ctx.seed.child(0), int(cfg.get_int(s, "instances")));
    const double err = block_design_recovery_error(m, n, ctx.seed.child(1));
    const bool fails = n >= triangular_size(m) || err > 0.1;
    std::ostringstream os;
    os << "objectives_agree " << (vacuous ? "true" : "false") << "\nnoiseless_relative_error " << detail::real(err)
       << "\nresult " << detail::pass_fail(vacuous && fails) << '\n';
    auto f = detail::open_output(ctx, "example1.txt");
    f << os.str();
    if (!ctx.quiet) ctx.os << os.str();
  };
  return c;
}

inline Command prop4_command() {
  Command c;
  c.name = "checks.prop4";
  c.summary = "Noiseless recovery of a low-rank PSD target from n = C m r measurements";
  c.params = {{"m", "matrix dimension"}, {"r", "target rank"}, {"c", "n = c m r"}, {"trials", "trials"}};
  c.defaults = [](bool) { return Config::Section{{"r", "2"}, {"c", "3"}, {"trials", "20"}}; };
  c.run = [](const Config& cfg, const std::string& s, Context& ctx) {
    detail::require(cfg, s, "m");
    const long m = cfg.get_int(s, "m");
    const long r = cfg.get_int(s, "r");
    const long n = std::lround(cfg.get_real(s, "c") * double(m * r));
    const int trials = int(cfg.get_int(s, "trials"));
    const auto res = parallel_map(trials, ctx.threads, [&](long k) {
      return noiseless_recovery_trial(m, r, n, ctx.seed.child(std::uint64_t(k)));
    });
    int recovered = 0;
    auto f = detail::open_output(ctx, "prop4.csv");
    f << "trial,relative_error,tau_sq_T,phi_sq_T_certified\n";
    for (std::size_t k = 0; k < res.size(); ++k) {
      recovered += res[k].relative_error <= 1e-4;
      f << k << ',' << detail::real(res[k].relative_error) << ',' << detail::real(res[k].tau_sq_T) << ','
        << detail::real(res[k].phi_sq_T_certified) << '\n';
    }
    const bool ok = recovered >= int(std::ceil(0.95 * trials));
    detail::say(ctx, "n " + std::to_string(n) + "\nrecovered " + std::to_string(recovered) + "/" +
                         std::to_string(trials) + "\nresult " + detail::pass_fail(ok));
  };
  return c;
}

inline std::vector<Command> all_commands() {
  return {solve_command(),  constants_command(), tau_phase_command(), compare_command(), spiked_command(),
          prop1_command(),  prop2_command(),     example1_command(),  prop4_command()};
}

// ---------------------------------------------------------------------------
// Entry point

/// Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Constrained least squares for PSD trace regression", "spdls"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config_path;
  int threads = 1;
  bool full_scale = false;
  bool quiet = false;
  auto* seed_opt = app.add_option("--seed", seed, "root random seed");
  app.add_option("--out", out_dir, "output directory (created if missing)");
  app.add_option("--config", config_path, "config file (key = value, one section per subcommand)");
  app.add_option("--threads", threads, "worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--full-scale", full_scale, "use the full-size grids as defaults");
  app.add_flag("--quiet", quiet, "suppress console summaries");

  const std::vector<Command> commands = all_commands();
  std::map<std::string, std::string> given;  // key -> raw flag value, per command
  std::map<std::string, std::pair<const Command*, CLI::App*>> subs;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  CLI::App* checks = app.add_subcommand("checks", "Negative-control and limit checks");
  checks->require_subcommand(1);
  for (const auto& cmd : commands) {
    const bool nested = cmd.name.rfind("checks.", 0) == 0;
    const std::string sub_name = nested ? cmd.name.substr(7) : cmd.name;
    CLI::App* sub = (nested ? checks : &app)->add_subcommand(sub_name, cmd.summary);
    sub->fallthrough();
    for (const auto& p : cmd.params) {
      const std::string id = cmd.name + "/" + p.key;
      CLI::Option* o = nullptr;
      if (p.is_flag) {
        o = sub->add_flag(detail::flag_name(p.key), p.help);
      } else {
        o = sub->add_option(detail::flag_name(p.key), given[id], p.help);
      }
      options[cmd.name][p.key] = o;
    }
    subs[cmd.name] = {&cmd, sub};
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto& [name, entry] : subs)
      if (entry.second->parsed()) failed = entry.second;
    err << failed->help();
    return 1;
  }

  const Command* cmd = nullptr;
  for (const auto& [name, entry] : subs)
    if (entry.second->parsed()) cmd = entry.first;
  if (!cmd) {
    err << app.help();
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    Config cfg;
    for (const auto& [k, v] : cmd->defaults(full_scale)) cfg.set(cmd->name, k, v);
    RngSeed root{seed};
    if (!config_path.empty()) {
      const Config file = read_config(config_path);
      if (file.sections().count(cmd->name)) {
        for (const auto& [k, v] : file.sections().at(cmd->name)) {
          const bool known = std::any_of(cmd->params.begin(), cmd->params.end(),
                                         [&](const Param& p) { return p.key == k; });
          if (!known) throw InvalidInput(config_path + ": unknown key '" + k + "' in [" + cmd->name + "]");
          cfg.set(cmd->name, k, v);
        }
      }
      if (file.has("run", "seed") && seed_opt->count() == 0) root = RngSeed{file.get_u64("run", "seed")};
    }
    for (const auto& p : cmd->params) {
      CLI::Option* o = options.at(cmd->name).at(p.key);
      if (o->count() == 0) continue;
      cfg.set(cmd->name, p.key, p.is_flag ? "true" : given.at(cmd->name + "/" + p.key));
    }
    Context ctx{out_dir, root, threads, quiet, out};
    ensure_directory(ctx.out);
    cmd->run(cfg, cmd->name, ctx);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(ctx.out, cmd->name, cfg, root, wall);
    return 0;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace spdls::cli
