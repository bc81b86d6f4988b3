#pragma once

// Experiment orchestration behind the command-line tool. run_experiment is a
// pure function of (config, seed, threads) -> report; threads never change
// the report body. Files are written only after everything has succeeded.

#include "ifscert/io.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ifscert {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitFail = 2, kExitInconclusive = 3 };

struct RunResult {
  int exit_code = kExitOk;
  std::string outcome;
  io::json report;
  /// file name -> contents
  std::vector<std::pair<std::string, std::string>> csv;
};

namespace detail {

struct RunContext {
  io::Node cfg;
  std::uint64_t seed = 0;
  Exec exec;
};

inline IfsSpec read_ifs(const io::Node& cfg, const ManifoldSpec& m) {
  const auto maps = io::read_maps(cfg.at("maps"), m);
  return io::at_path(cfg.at("maps"), [&] { return IfsSpec(maps); });
}

inline std::vector<int> read_ns(const io::Node& cfg) {
  std::vector<int> ns;
  if (cfg.has("n_values")) {
    for (const auto& n : cfg.at("n_values").items()) ns.push_back(static_cast<int>(n.integer()));
  } else {
    ns.push_back(static_cast<int>(cfg.at("n").integer()));
  }
  for (int n : ns)
    if (n < 1) cfg.fail("word lengths must be >= 1");
  return ns;
}

inline std::uint64_t read_samples(const io::Node& cfg, std::uint64_t fallback) {
  const std::uint64_t s = cfg.has("samples") ? cfg.at("samples").unsigned_integer() : fallback;
  if (s < 2) cfg.fail("samples must be >= 2");
  return s;
}

/// "auto" tries exact evaluation and falls back to Monte Carlo when enumeration is out of reach.
enum class ModeChoice { Auto, Exact, MonteCarlo };

inline ModeChoice read_mode(const io::Node& cfg) {
  const std::string mode = cfg.string_or("mode", "auto");
  if (mode == "auto") return ModeChoice::Auto;
  if (mode == "exact") return ModeChoice::Exact;
  if (mode == "monte_carlo") return ModeChoice::MonteCarlo;
  cfg.at("mode").fail("unknown mode '" + mode + "' (auto, exact, monte_carlo)");
}

template <class ExactFn, class McFn>
Estimate choose(ModeChoice mode, ExactFn&& exact, McFn&& mc) {
  if (mode == ModeChoice::MonteCarlo) return mc();
  if (mode == ModeChoice::Exact) return exact();
  try {
    return exact();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EnumerationTooLarge) throw;
    return mc();
  }
}

inline std::string csv_text(const std::string& header, const std::vector<std::string>& rows) {
  std::string out = header + "\n";
  for (const auto& r : rows) out += r + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// experiments

inline RunResult run_estimate(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const IfsSpec ifs = read_ifs(cfg, m);
  const Subspace s = io::read_subspace(cfg.at("subspace"), m);
  const auto ns = read_ns(cfg);
  const ModeChoice mode = read_mode(cfg);
  const std::uint64_t samples = read_samples(cfg, 10000);
  std::vector<std::string> functionals = {"C", "D"};
  if (cfg.has("functionals")) {
    functionals.clear();
    for (const auto& f : cfg.at("functionals").items()) {
      functionals.push_back(f.string());
      if (functionals.back() != "C" && functionals.back() != "D") f.fail("functional must be C or D");
    }
  }
  ExactOptions opts;
  opts.exec = ctx.exec;
  const WordDistribution dist{ifs.size(), ctx.seed};

  RunResult r;
  io::json rows = io::json::array();
  std::vector<std::string> csv;
  for (int n : ns)
    for (const auto& f : functionals) {
      const bool c = f == "C";
      const Estimate e = choose(
          mode, [&] { return c ? exact_C(ifs, s, n, opts) : exact_D(ifs, s, n, opts); },
          [&] { return c ? estimate_C(ifs, s, n, samples, dist, ctx.exec) : estimate_D(ifs, s, n, samples, dist, ctx.exec); });
      rows.push_back({{"functional", f}, {"n", n}, {"estimate", io::to_json(e)}, {"per_step", e.mean / n}});
      csv.push_back(csv_row(f, n, e, ctx.seed));
    }
  r.report = {{"estimates", rows}};
  r.csv.emplace_back("estimates.csv", csv_text(csv_header(), csv));
  r.outcome = "completed";
  return r;
}

inline RunResult run_moments(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const IfsSpec ifs = read_ifs(cfg, m);
  const Subspace s = io::read_subspace(cfg.at("subspace"), m);
  const auto ns = read_ns(cfg);
  const double sigma = cfg.at("sigma").number();
  if (!(sigma > 0.0)) cfg.at("sigma").fail("sigma must be positive");
  const MomentSide side = cfg.has("side") ? io::read_side(cfg.at("side")) : MomentSide::Transverse;
  const ModeChoice mode = read_mode(cfg);
  const std::uint64_t samples = read_samples(cfg, 10000);
  const std::optional<double> kappa1 =
      cfg.has("kappa1") ? std::optional<double>(cfg.at("kappa1").number()) : std::nullopt;
  const double tolerance = cfg.number_or("slope_tolerance", 0.05);
  ExactOptions opts;
  opts.exec = ctx.exec;
  const WordDistribution dist{ifs.size(), ctx.seed};
  const std::string name = side == MomentSide::Transverse ? "sigma_moment_transverse" : "sigma_moment_tangential_inverse";

  RunResult r;
  io::json rows = io::json::array();
  std::vector<std::string> csv;
  std::vector<double> xs, ys;
  for (int n : ns) {
    const Estimate e = choose(
        mode, [&] { return exact_sigma_moment(ifs, s, n, sigma, side, opts); },
        [&] { return sigma_moment(ifs, s, n, sigma, side, samples, dist, ctx.exec); });
    rows.push_back({{"n", n}, {"estimate", io::to_json(e)}, {"log_mean", std::log(e.mean)}});
    csv.push_back(csv_row(name, n, e, ctx.seed));
    xs.push_back(n);
    ys.push_back(std::log(e.mean));
  }
  r.report = {{"side", name}, {"sigma", sigma}, {"moments", rows}};
  r.outcome = "completed";
  if (xs.size() >= 2) {
    // least-squares slope of log moment against n
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
    const double slope = sxy / sxx;
    r.report["slope"] = slope;
    if (kappa1) {
      const double bound = -sigma * *kappa1 + tolerance;
      const bool pass = slope <= bound;
      r.report["decay_check"] = {{"kappa1", *kappa1}, {"bound", bound}, {"pass", pass}};
      r.outcome = pass ? "pass" : "fail";
      r.exit_code = pass ? kExitOk : kExitFail;
    }
  }
  r.csv.emplace_back("moments.csv", csv_text(csv_header(), csv));
  return r;
}

inline RunResult run_lyapunov(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const IfsSpec ifs = read_ifs(cfg, m);
  const Point x = cfg.has("point") ? io::read_point(cfg.at("point"), m) : reference_point(m);
  const int n = static_cast<int>(cfg.at("n").integer());
  if (n < 10) cfg.at("n").fail("n must be >= 10");
  const std::uint64_t samples = cfg.has("samples") ? cfg.at("samples").unsigned_integer() : 100;
  if (samples < 1) cfg.at("samples").fail("samples must be >= 1");
  LyapunovOptions opts;
  opts.burn_in = static_cast<int>(cfg.integer_or("burn_in", opts.burn_in));
  if (opts.burn_in < 0) cfg.at("burn_in").fail("burn_in must be >= 0");
  opts.exec = ctx.exec;
  const auto spectrum = lyapunov_spectrum(ifs, x, n, samples, {ifs.size(), ctx.seed}, opts);
  RunResult r;
  io::json exps = io::json::array();
  std::vector<std::string> csv;
  double sum = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    exps.push_back(io::to_json(spectrum[i]));
    sum += spectrum[i].mean;
    csv.push_back(csv_row("lambda_" + std::to_string(i + 1), n, spectrum[i], ctx.seed));
  }
  r.report = {{"exponents", exps}, {"sum", sum}, {"burn_in", opts.burn_in}};
  r.csv.emplace_back("lyapunov.csv", csv_text(csv_header(), csv));
  r.outcome = "completed";
  return r;
}

inline EstimatorConfig read_estimator(const io::Node& cfg, const RunContext& ctx) {
  EstimatorConfig e;
  e.samples = read_samples(cfg, 10000);
  e.seed = ctx.seed;
  e.exec = ctx.exec;
  e.force_monte_carlo = cfg.string_or("mode", "auto") == "monte_carlo";
  if (cfg.has("mode")) read_mode(cfg);
  return e;
}

inline int verdict_exit(Verdict v) {
  switch (v) {
    case Verdict::Certified: return kExitOk;
    case Verdict::Refuted: return kExitFail;
    case Verdict::Inconclusive: return kExitInconclusive;
  }
  return kExitError;
}

inline RunResult run_certify(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const IfsSpec ifs = read_ifs(cfg, m);
  const int b = static_cast<int>(cfg.integer_or("b", 1));
  const int n0 = static_cast<int>(cfg.integer_or("n0", 1));
  double kappa1 = 0.0, kappa2 = 0.0;
  io::json ledger;
  if (cfg.has("ledger")) {
    const io::Node l = cfg.at("ledger");
    const SplittingConstants c = io::read_constants(l.at("constants"));
    const double eta = l.at("eta").number(), tau = l.at("tau").number(), log_a = l.at("log_a").number();
    const UniformConstants u = io::at_path(l, [&] { return uniform_constants(c, eta, tau, log_a); });
    kappa1 = u.kappa1;
    kappa2 = u.kappa2;
    ledger = io::to_json(u);
  } else {
    kappa1 = cfg.at("kappa1").number();
    kappa2 = cfg.at("kappa2").number();
  }
  if (!(kappa1 > 0.0 && kappa2 < kappa1)) cfg.fail("need kappa1 > 0 and kappa2 < kappa1");
  if (b < 1 || b > m.dim - 1) cfg.at("b").fail("b must lie in [1, d-1]");
  if (n0 < 1) cfg.at("n0").fail("n0 must be >= 1");
  const GridSpec grid = io::read_grid(cfg.find("grid"));
  const EstimatorConfig est = read_estimator(cfg, ctx);

  RunResult r;
  const auto cert = certify_uniform(ifs, b, n0, kappa1, kappa2, grid, est);
  r.report = {{"certificate", io::to_json(cert)}};
  if (!ledger.is_null()) r.report["ledger"] = ledger;
  r.outcome = to_string(cert.verdict);
  r.exit_code = verdict_exit(cert.verdict);
  return r;
}

inline SubspaceField read_constant_field(const io::Node& n, const ManifoldSpec& m) {
  const Matrix b = n.matrix();
  if (b.rows() != m.dim || b.cols() < 1 || b.cols() > m.dim - 1) n.fail("expected a d x k basis with 1 <= k <= d-1");
  io::at_path(n, [&] { Subspace::make(m, reference_point(m), b); });
  return constant_field(b);
}

inline RunResult run_build_uniform(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const Diffeo g = io::read_map(cfg.at("g"), m);
  const auto h = io::read_maps(cfg.at("maps"), m);
  const io::Node sp = cfg.at("splitting");
  const SplittingSpec split{read_constant_field(sp.at("e1"), m), read_constant_field(sp.at("e2"), m)};
  const SplittingConstants c = io::read_constants(cfg.at("constants"));
  const double eta = cfg.at("eta").number(), tau = cfg.at("tau").number();
  BuildUniformOptions opts;
  opts.enforce_nontransverse = cfg.boolean_or("enforce_nontransverse", true);
  if (cfg.has("log_a")) opts.log_a_override = cfg.at("log_a").number();
  opts.grid = io::read_grid(cfg.find("grid"));
  opts.verify_j = cfg.boolean_or("verify_j", true);
  opts.empirical_k = cfg.boolean_or("empirical_k", false);
  opts.estimator = read_estimator(cfg, ctx);
  const bool certify = cfg.boolean_or("certify", true);

  RunResult r;
  UniformBuild build;
  try {
    build = build_uniform_ifs(g, split, c, h, eta, tau, opts);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NontransverseFailed) throw;
    r.report = {{"error", e.what()},
                {"nontransverse", io::to_json(check_nontransverse(h, split.e1, eta, tau, opts.grid, ctx.exec))}};
    r.outcome = "fail";
    r.exit_code = kExitFail;
    return r;
  }
  r.report = {{"k", build.k},
              {"kappa1", build.kappa1},
              {"kappa2", build.kappa2},
              {"ledger", io::to_json(build.ledger)},
              {"log_c1_g", build.log_c1_g},
              {"j_verified", build.j_verified},
              {"j_max", build.j_max}};
  if (build.nontransverse) r.report["nontransverse"] = io::to_json(*build.nontransverse);
  if (build.empirical_k) r.report["empirical_k"] = *build.empirical_k;
  r.outcome = "completed";
  if (opts.verify_j && !build.j_verified) {
    r.outcome = "fail";
    r.exit_code = kExitFail;
  }
  if (certify) {
    GridSpec grid = opts.grid;
    const auto cert = certify_uniform(IfsSpec(build.maps), m.dim - static_cast<int>(split.e1(reference_point(m)).cols()),
                                      1, build.kappa1, build.kappa2, grid, opts.estimator);
    r.report["certificate"] = io::to_json(cert);
    if (r.exit_code == kExitOk) {
      r.outcome = to_string(cert.verdict);
      r.exit_code = verdict_exit(cert.verdict);
    }
  }
  return r;
}

inline RunResult run_nontransverse(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const auto h = io::read_maps(cfg.at("maps"), m);
  const SubspaceField e1 = read_constant_field(cfg.at("e1"), m);
  const double eta = cfg.at("eta").number(), tau = cfg.at("tau").number();
  if (!(eta > 0.0 && eta < 1.0)) cfg.at("eta").fail("eta must lie in (0, 1)");
  if (!(tau > 0.0)) cfg.at("tau").fail("tau must be positive");
  const GridSpec grid = io::read_grid(cfg.find("grid"));
  const auto rep = check_nontransverse(h, e1, eta, tau, grid, ctx.exec);
  RunResult r;
  r.report = {{"nontransverse", io::to_json(rep)}, {"eta", eta}, {"tau", tau}};
  r.outcome = rep.pass ? "pass" : "fail";
  r.exit_code = rep.pass ? kExitOk : kExitFail;
  return r;
}

inline RunResult run_perturb_search(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const auto f = io::read_maps(cfg.at("maps"), m);
  const SubspaceField e1 = read_constant_field(cfg.at("e1"), m);
  const int ell = static_cast<int>(cfg.integer_or("ell", e1(reference_point(m)).cols()));
  std::vector<BasisField> fields = default_basis_fields(m);
  if (cfg.has("basis")) {
    fields.clear();
    for (const auto& item : cfg.at("basis").items()) {
      fields.push_back(io::read_basis_field(item));
      io::at_path(item, [&] { validate_basis_field(m, fields.back()); });
    }
  }
  PerturbSearchOptions o;
  o.eta = cfg.at("eta").number();
  o.tau = cfg.at("tau").number();
  o.epsilon = cfg.at("epsilon").number();
  o.tries = static_cast<int>(cfg.integer_or("tries", o.tries));
  o.step = cfg.number_or("step", o.step);
  o.seed = ctx.seed;
  o.grid = io::read_grid(cfg.find("grid"));
  o.exec = ctx.exec;
  if (!(o.eta > 0.0 && o.eta < 1.0)) cfg.at("eta").fail("eta must lie in (0, 1)");
  if (!(o.tau > 0.0)) cfg.at("tau").fail("tau must be positive");
  if (!(o.epsilon >= 0.0)) cfg.at("epsilon").fail("epsilon must be >= 0");
  if (o.tries < 1) cfg.at("tries").fail("tries must be >= 1");

  FieldBasis basis{m, fields, ell};
  RunResult r;
  if (cfg.has("basis_grid")) {
    const GridSpec bg = io::read_grid(cfg.find("basis_grid"));
    basis = build_field_basis(m, ell, fields, bg, ctx.exec);
    r.report["basis"] = io::to_json(basis);
  }
  const auto res = search_nontransverse_B(f, basis, e1, o);
  r.report["label"] = "empirical";
  r.report["found"] = res.found;
  r.report["seed"] = res.seed;
  r.report["tries_used"] = res.tries_used;
  r.report["best_fraction"] = res.best_fraction;
  r.report["best_try"] = res.best_try;
  r.report["nontransverse"] = io::to_json(res.report);
  if (res.found) {
    r.report["try_index"] = res.try_index;
    r.report["params"] = io::to_json(res.params);
  } else {
    r.report["best_params"] = io::to_json(res.params);
  }
  r.outcome = res.found ? "found" : "NotFound";
  r.exit_code = res.found ? kExitOk : kExitInconclusive;
  return r;
}

inline RunResult run_orbit_density(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const ManifoldSpec m = io::read_manifold(cfg.at("manifold"));
  const IfsSpec ifs = read_ifs(cfg, m);
  const Point x0 = cfg.has("point") ? io::read_point(cfg.at("point"), m) : reference_point(m);
  const std::int64_t n = cfg.at("n").integer();
  const double eps = cfg.at("epsilon").number();
  if (n < 1) cfg.at("n").fail("n must be >= 1");
  if (!(eps > 0.0)) cfg.at("epsilon").fail("epsilon must be positive");
  const auto words = static_cast<std::size_t>(cfg.integer_or("words", 1));
  if (words < 1) cfg.at("words").fail("words must be >= 1");
  std::vector<std::int64_t> checkpoints;
  if (cfg.has("checkpoints"))
    for (const auto& c : cfg.at("checkpoints").items()) checkpoints.push_back(c.integer());
  const WordDistribution dist{ifs.size(), ctx.seed};

  std::vector<DensityReport> reps(words);
  parallel_for(words, ctx.exec,
               [&](std::size_t i) { reps[i] = orbit_density(ifs, x0, n, eps, dist, i, checkpoints); });
  RunResult r;
  io::json out = io::json::array();
  std::vector<std::string> csv;
  double worst = 1.0;
  for (const auto& rep : reps) {
    out.push_back(io::to_json(rep));
    worst = std::min(worst, rep.coverage());
    for (const auto& [k, c] : rep.curve)
      csv.push_back(format_real(eps) + "," + std::to_string(k) + "," + format_real(c) + "," + std::to_string(ctx.seed));
    if (rep.curve.empty() || rep.curve.back().first != n)
      csv.push_back(format_real(eps) + "," + std::to_string(n) + "," + format_real(rep.coverage()) + "," +
                    std::to_string(ctx.seed));
  }
  r.report = {{"label", "empirical"}, {"words", out}, {"min_coverage", worst}};
  r.csv.emplace_back("density.csv", csv_text(density_csv_header(), csv));
  r.outcome = "completed";
  if (cfg.has("require_coverage")) {
    const bool pass = worst >= cfg.at("require_coverage").number();
    r.outcome = pass ? "pass" : "fail";
    r.exit_code = pass ? kExitOk : kExitFail;
  }
  return r;
}

using Handler = RunResult (*)(const RunContext&);

inline const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table = {
      {"estimate", run_estimate},       {"moments", run_moments},
      {"lyapunov", run_lyapunov},       {"certify", run_certify},
      {"build-uniform", run_build_uniform}, {"nontransverse", run_nontransverse},
      {"perturb-search", run_perturb_search}, {"orbit-density", run_orbit_density}};
  return table;
}

}  // namespace detail

inline std::vector<std::string> experiment_kinds() {
  std::vector<std::string> out;
  for (const auto& [k, v] : detail::handlers()) out.push_back(k);
  return out;
}

/// `kind` must match config.experiment when the latter is present.
inline RunResult run_experiment(const std::string& kind, const io::json& config,
                                std::optional<std::uint64_t> seed_override, const Exec& exec) {
  const io::Node cfg(config, "");
  if (!config.is_object()) cfg.fail("expected a JSON object");
  const auto it = detail::handlers().find(kind);
  if (it == detail::handlers().end()) cfg.fail("unknown experiment '" + kind + "'");
  if (cfg.has("experiment") && cfg.at("experiment").string() != kind)
    cfg.at("experiment").fail("config is for '" + cfg.at("experiment").string() + "', not '" + kind + "'");
  const std::uint64_t seed = seed_override ? *seed_override : (cfg.has("seed") ? cfg.at("seed").unsigned_integer() : 0);

  RunResult r = it->second(detail::RunContext{cfg, seed, exec});
  io::json echo = config;
  echo["experiment"] = kind;
  echo["seed"] = seed;
  io::json body = {{"tool", "ifscert"},     {"version", kToolVersion}, {"experiment", kind},
                   {"seed", seed},          {"outcome", r.outcome},    {"exit_code", r.exit_code},
                   {"config", echo},        {"result", r.report}};
  r.report = std::move(body);
  return r;
}

inline std::string report_text(const RunResult& r) { return r.report.dump(2) + "\n"; }

inline Exec resolve_threads(std::optional<unsigned> flag, const io::json& config) {
  if (flag && *flag > 0) return Exec{*flag};
  const Exec env = Exec::from_env();
  if (std::getenv("IFSCERT_THREADS") && env.threads > 0) return env;
  if (config.is_object() && config.contains("threads") && config["threads"].is_number_unsigned())
    return Exec{std::max(1u, config["threads"].get<unsigned>())};
  return Exec{1};
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes report.json, report.meta.json and CSVs into `dir` via temp files and rename.
inline void write_outputs(const std::filesystem::path& dir, const RunResult& r, const io::json& meta) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> files = {{"report.json", report_text(r)},
                                                            {"report.meta.json", meta.dump(2) + "\n"}};
  for (const auto& c : r.csv) files.push_back(c);
  for (const auto& [name, text] : files) {
    const auto tmp = dir / (name + ".tmp");
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    out.close();
    if (!out) throw Error(ErrorCode::ConfigInvalid, "cannot write " + tmp.string());
  }
  for (const auto& [name, text] : files) std::filesystem::rename(dir / (name + ".tmp"), dir / name);
}

}  // namespace ifscert
