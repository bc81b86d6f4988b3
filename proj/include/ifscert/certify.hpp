#pragma once

// Decision procedures: grid certification of (n0, kappa1, kappa2, b)-uniformity,
// dominated splitting / partial hyperbolicity / pinching checks,
// eta-nontransversality, and the constant calculus turning a dominated
// splitting plus a nontransverse family into a uniform IFS {g^K h_i}.

#include "ifscert/error.hpp"
#include "ifscert/estimators.hpp"
#include "ifscert/grassmann.hpp"
#include "ifscert/grid.hpp"
#include "ifscert/maps.hpp"
#include "ifscert/parallel.hpp"
#include "ifscert/randomwords.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace ifscert {

// ---------------------------------------------------------------------------
// Splittings

/// Continuous subspace distribution, returning frame-coordinate bases.
using SubspaceField = std::function<Matrix(const Point&)>;

inline SubspaceField constant_field(const Matrix& basis) {
  return [basis](const Point&) { return basis; };
}

struct SplittingSpec {
  SubspaceField e1;
  SubspaceField e2;
};

struct SplittingConstants {
  double chi_bar_1 = 0.0;
  double chi_hat_1 = 0.0;
  std::optional<double> chi_hat_u;
  std::optional<double> chi_hat_s;
  std::optional<double> chi_hat;
};

inline void validate_constants(const SplittingConstants& c) {
  require(std::isfinite(c.chi_bar_1) && std::isfinite(c.chi_hat_1), ErrorCode::BadConstants,
          "splitting constants must be finite");
  require(c.chi_bar_1 < c.chi_hat_1, ErrorCode::BadConstants, "need chi_bar_1 < chi_hat_1");
}

// ---------------------------------------------------------------------------
// Uniformity certificates

enum class Verdict { Certified, Refuted, Inconclusive };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Certified: return "Certified";
    case Verdict::Refuted: return "Refuted";
    case Verdict::Inconclusive: return "Inconclusive";
  }
  return "?";
}

struct EstimatorConfig {
  std::uint64_t samples = 10000;
  std::uint64_t seed = 0;
  ExactOptions exact{};
  Exec exec{};
  /// Forces Monte Carlo even when enumeration is affordable.
  bool force_monte_carlo = false;
};

struct UniformityCertificate {
  int n0 = 1;
  int b = 1;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  Verdict verdict = Verdict::Inconclusive;
  /// Worst-case slack in nats: -kappa1 - C/n0 and D/n0 + kappa2.
  double margin_C = 0.0;
  double margin_D = 0.0;
  /// Statistical error attached to each worst margin (0 in Exact mode).
  double margin_C_stderr = 0.0;
  double margin_D_stderr = 0.0;
  std::optional<Subspace> witness;
  /// "C" or "D": the inequality the witness violates.
  std::string witness_inequality;
  EstimateMode mode = EstimateMode::Exact;
  std::size_t grid_size = 0;
  bool x_independent = false;
};

struct CertifyPoint {
  Estimate c, d;
  double margin_C, margin_D;
};

/// Both inequalities at one (x, E).
inline CertifyPoint evaluate_uniformity(const IfsSpec& ifs, const Subspace& s, int n0, double kappa1, double kappa2,
                                        const EstimatorConfig& cfg, std::uint64_t stream, bool exact) {
  CertifyPoint p;
  if (exact) {
    ExactOptions opts = cfg.exact;
    opts.exec = Exec{1};
    p.c = exact_C(ifs, s, n0, opts);
    p.d = exact_D(ifs, s, n0, opts);
  } else {
    const WordDistribution dist{ifs.size(), mix_seed(cfg.seed, stream)};
    const auto kernels = detail::sample_kernels(ifs, s, n0, cfg.samples, dist, Exec{1});
    std::vector<double> cv(kernels.size()), dv(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      cv[i] = kernels[i].log_transverse;
      dv[i] = kernels[i].log_tangential;
    }
    p.c = detail::summarize(cv, EstimateMode::MonteCarlo, cfg.samples);
    p.d = detail::summarize(dv, EstimateMode::MonteCarlo, cfg.samples);
  }
  p.margin_C = -kappa1 - p.c.mean / n0;
  p.margin_D = p.d.mean / n0 + kappa2;
  return p;
}

inline UniformityCertificate certify_uniform(const IfsSpec& ifs, int b, int n0, double kappa1, double kappa2,
                                             const GridSpec& grid, const EstimatorConfig& cfg = {}) {
  require(kappa1 > 0.0 && kappa2 < kappa1, ErrorCode::BadConstants, "need kappa1 > 0 and kappa2 < kappa1");
  const int d = ifs.manifold().dim;
  require(b >= 1 && b <= d - 1, ErrorCode::InvalidSpec, "b must lie in [1, d-1]");
  require(n0 >= 1, ErrorCode::InvalidSpec, "n0 must be >= 1");
  UniformityCertificate cert;
  cert.n0 = n0;
  cert.b = b;
  cert.kappa1 = kappa1;
  cert.kappa2 = kappa2;
  cert.x_independent = ifs.is_linear_toral();
  const auto cells = grassmann_grid(ifs.manifold(), d - b, grid, cert.x_independent);
  cert.grid_size = cells.size();
  const bool exact =
      !cfg.force_monte_carlo && detail::word_count(ifs.size(), n0, cfg.exact.enumeration_cap) <= cfg.exact.enumeration_cap;
  cert.mode = exact ? EstimateMode::Exact : EstimateMode::MonteCarlo;
  std::vector<CertifyPoint> results(cells.size());
  parallel_for(cells.size(), cfg.exec, [&](std::size_t i) {
    results[i] = evaluate_uniformity(ifs, cells[i], n0, kappa1, kappa2, cfg, i, exact);
  });

  // Worst margins, and the strongest violation (margin measured in stderr units).
  const double noise = exact ? 0.0 : 4.0;
  std::size_t worst_c = 0, worst_d = 0;
  double worst_violation = 0.0;
  std::optional<std::size_t> witness;
  std::string witness_side;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.margin_C < results[worst_c].margin_C) worst_c = i;
    if (r.margin_D < results[worst_d].margin_D) worst_d = i;
    const double se_c = r.c.stderr_ / n0, se_d = r.d.stderr_ / n0;
    // violation depth beyond the noise band
    const double vc = r.margin_C + noise * se_c;
    const double vd = r.margin_D + noise * se_d;
    if (vc < 0.0 && (!witness || vc < worst_violation)) {
      witness = i;
      worst_violation = vc;
      witness_side = "C";
    }
    if (vd < 0.0 && (!witness || vd < worst_violation)) {
      witness = i;
      worst_violation = vd;
      witness_side = "D";
    }
  }
  cert.margin_C = results[worst_c].margin_C;
  cert.margin_D = results[worst_d].margin_D;
  cert.margin_C_stderr = results[worst_c].c.stderr_ / n0;
  cert.margin_D_stderr = results[worst_d].d.stderr_ / n0;
  if (witness) {
    cert.verdict = Verdict::Refuted;
    cert.witness = cells[*witness];
    cert.witness_inequality = witness_side;
    return cert;
  }
  bool certified = true;
  for (const auto& r : results) {
    const double se_c = r.c.stderr_ / n0, se_d = r.d.stderr_ / n0;
    if (!(r.margin_C > noise * se_c && r.margin_D > noise * se_d)) certified = false;
    if (exact && !(r.margin_C > 0.0 && r.margin_D > 0.0)) certified = false;
  }
  cert.verdict = certified ? Verdict::Certified : Verdict::Inconclusive;
  return cert;
}

struct UniformitySweep {
  std::vector<UniformityCertificate> runs;  // n0 = 1..n0_max
  std::size_t best = 0;                     // index of the run with the largest min margin
};

/// Only one n0 needs to work; reports every run and the best.
inline UniformitySweep certify_uniform_sweep(const IfsSpec& ifs, int b, int n0_max, double kappa1, double kappa2,
                                             const GridSpec& grid, const EstimatorConfig& cfg = {}) {
  require(n0_max >= 1, ErrorCode::InvalidSpec, "n0_max must be >= 1");
  UniformitySweep out;
  auto score = [](const UniformityCertificate& c) {
    const int rank = c.verdict == Verdict::Certified ? 2 : c.verdict == Verdict::Inconclusive ? 1 : 0;
    return std::pair{rank, std::min(c.margin_C, c.margin_D)};
  };
  for (int n0 = 1; n0 <= n0_max; ++n0) {
    out.runs.push_back(certify_uniform(ifs, b, n0, kappa1, kappa2, grid, cfg));
    if (score(out.runs.back()) > score(out.runs[out.best])) out.best = out.runs.size() - 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dominated splitting, partial hyperbolicity, pinching

struct DominationReport {
  bool pass = false;
  /// min over the grid of chi_bar_1 - log sup_{E1} |Df v|
  double margin_contraction = 0.0;
  /// min over the grid of log inf_{E2} |Df u| - chi_hat_1
  double margin_expansion = 0.0;
  Point worst_contraction, worst_expansion;
};

namespace detail {

inline void check_invariant(const Diffeo& f, const Point& x, const SubspaceField& field, const char* name) {
  const ManifoldSpec m = f.manifold();
  const Subspace e = Subspace::make(m, x, field(x));
  const Subspace image = pushforward(f, e);
  const Subspace target = Subspace::make(m, image.base, field(image.base));
  require(target.dim() == image.dim() && max_principal_angle(image, target) <= 1e-6, ErrorCode::FieldNotInvariant,
          std::string("field ") + name + " is not Df-invariant at a grid point");
}

inline void check_transverse_pair(const ManifoldSpec& m, const Point& x, const Matrix& a, const Matrix& b) {
  require(a.cols() + b.cols() == m.dim, ErrorCode::InvalidSpec, "splitting dimensions must sum to d");
  const Subspace ea = Subspace::make(m, x, a), eb = Subspace::make(m, x, b);
  require(principal_angle(ea, eb) > 1e-6, ErrorCode::InvalidSpec, "splitting subspaces intersect");
}

}  // namespace detail

inline DominationReport check_dominated_splitting(const Diffeo& f, const SplittingSpec& sp, const SplittingConstants& c,
                                                  const GridSpec& grid) {
  validate_constants(c);
  const ManifoldSpec m = f.manifold();
  const auto pts = grid_points(m, grid, f.is_linear_toral());
  DominationReport r;
  r.margin_contraction = r.margin_expansion = std::numeric_limits<double>::infinity();
  for (const auto& x : pts) {
    const Matrix e1 = sp.e1(x), e2 = sp.e2(x);
    detail::check_transverse_pair(m, x, e1, e2);
    detail::check_invariant(f, x, sp.e1, "E1");
    detail::check_invariant(f, x, sp.e2, "E2");
    const Matrix df = f.differential(x);
    const Matrix q1 = Subspace::make(m, x, e1).basis, q2 = Subspace::make(m, x, e2).basis;
    const double mc = c.chi_bar_1 - std::log(linalg::op_norm(df * q1));
    const double me = std::log(linalg::min_singular_value(df * q2)) - c.chi_hat_1;
    if (mc < r.margin_contraction) {
      r.margin_contraction = mc;
      r.worst_contraction = x;
    }
    if (me < r.margin_expansion) {
      r.margin_expansion = me;
      r.worst_expansion = x;
    }
  }
  r.pass = r.margin_contraction > 0.0 && r.margin_expansion > 0.0;
  return r;
}

struct ThreeWaySplitting {
  SubspaceField stable;
  SubspaceField center;  // may be null for an empty center
  SubspaceField unstable;
};

struct PartialHyperbolicityConstants {
  double chi_bar_s = 0.0;
  double chi_bar_c = 0.0;
  double chi_hat_c = 0.0;
  double chi_bar_u = 0.0;
};

struct PartialHyperbolicityReport {
  bool pass = false;
  double margin_stable = 0.0;        // -chi_bar_s - log sup_{Es} |Df|
  double margin_center_lower = 0.0;  // log inf_{Ec} |Df| - chi_bar_c
  double margin_center_upper = 0.0;  // chi_hat_c - log sup_{Ec} |Df|
  double margin_unstable = 0.0;      // log inf_{Eu} |Df| - chi_bar_u
};

/// Inequalities are strict, as in the definition: a center with rate exactly
/// 0 needs chi_bar_c < 0 < chi_hat_c.
inline PartialHyperbolicityReport check_partial_hyperbolicity(const Diffeo& f, const ThreeWaySplitting& sp,
                                                              const PartialHyperbolicityConstants& c,
                                                              const GridSpec& grid) {
  require(c.chi_bar_s > 0.0 && c.chi_bar_u > 0.0, ErrorCode::BadConstants, "need chi_bar_s > 0 and chi_bar_u > 0");
  require(-c.chi_bar_s < c.chi_bar_c && c.chi_bar_c <= c.chi_hat_c && c.chi_hat_c < c.chi_bar_u,
          ErrorCode::BadConstants, "need -chi_bar_s < chi_bar_c <= chi_hat_c < chi_bar_u");
  const ManifoldSpec m = f.manifold();
  const double inf = std::numeric_limits<double>::infinity();
  PartialHyperbolicityReport r{false, inf, inf, inf, inf};
  for (const auto& x : grid_points(m, grid, f.is_linear_toral())) {
    const Matrix df = f.differential(x);
    const Matrix es = sp.stable(x), eu = sp.unstable(x);
    const Matrix ec = sp.center ? sp.center(x) : Matrix(m.dim, 0);
    require(es.cols() + ec.cols() + eu.cols() == m.dim, ErrorCode::InvalidSpec, "splitting dimensions must sum to d");
    Matrix all(m.dim, m.dim);
    all << es, ec, eu;
    require(linalg::singular_values(all).minCoeff() > 1e-6, ErrorCode::InvalidSpec, "splitting is degenerate");
    detail::check_invariant(f, x, sp.stable, "Es");
    detail::check_invariant(f, x, sp.unstable, "Eu");
    if (ec.cols() > 0) detail::check_invariant(f, x, sp.center, "Ec");
    auto orth = [&](const Matrix& b) { return linalg::qr_positive(b).q; };
    r.margin_stable = std::min(r.margin_stable, -c.chi_bar_s - std::log(linalg::op_norm(df * orth(es))));
    r.margin_unstable = std::min(r.margin_unstable, std::log(linalg::min_singular_value(df * orth(eu))) - c.chi_bar_u);
    if (ec.cols() > 0) {
      const Matrix img = df * orth(ec);
      r.margin_center_lower = std::min(r.margin_center_lower, std::log(linalg::min_singular_value(img)) - c.chi_bar_c);
      r.margin_center_upper = std::min(r.margin_center_upper, c.chi_hat_c - std::log(linalg::op_norm(img)));
    }
  }
  r.pass = r.margin_stable > 0 && r.margin_unstable > 0 && r.margin_center_lower > 0 && r.margin_center_upper > 0;
  return r;
}

struct PinchingReport {
  bool pinched = false;
  double slack = 0.0;  // (chi_hat_1 - chi_bar_1) - theta * max(chi_hat_u, chi_hat_s)
};

inline PinchingReport check_pinching(const SplittingConstants& c, double theta) {
  require(c.chi_hat_u.has_value() && c.chi_hat_s.has_value(), ErrorCode::MissingConstants,
          "pinching needs chi_hat_u and chi_hat_s");
  require(*c.chi_hat_u > 0.0 && *c.chi_hat_s > 0.0, ErrorCode::MissingConstants,
          "chi_hat_u and chi_hat_s must be positive");
  require(theta > 0.0 && theta < 1.0, ErrorCode::InvalidSpec, "theta must lie in (0, 1)");
  PinchingReport r;
  r.slack = (c.chi_hat_1 - c.chi_bar_1) - theta * std::max(*c.chi_hat_u, *c.chi_hat_s);
  r.pinched = r.slack > 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// eta-nontransversality

struct NontransverseReport {
  bool pass = false;
  /// min over the grid of #{i : angle > tau} / L
  double worst_fraction = 1.0;
  std::size_t worst_count = 0;
  std::optional<Subspace> witness;
  std::size_t grid_size = 0;
};

/// Adds, at every point, the subspaces that some h_i maps exactly onto E1:
/// these are where the transverse count is smallest.
inline std::vector<Subspace> nontransverse_grid(const std::vector<Diffeo>& h_list, const SubspaceField& e1, int ell,
                                                const GridSpec& grid, bool x_independent) {
  require(!h_list.empty(), ErrorCode::InvalidSpec, "h_list is empty");
  const ManifoldSpec m = h_list.front().manifold();
  const int k = m.dim - ell;
  std::vector<Subspace> out;
  const auto bases = subspace_bases(m.dim, k, grid);
  for (const auto& x : grid_points(m, grid, x_independent)) {
    for (const auto& b : bases) out.push_back(Subspace::make(m, x, b));
    if (k != ell) continue;
    out.push_back(Subspace::make(m, x, e1(x)));
    for (const auto& h : h_list) {
      const Point y = h.apply(x);
      const Subspace target = Subspace::make(m, y, e1(y));
      out.push_back(pushforward(h.inverse(), target));
      out.back().base = x;  // pullback lands back at x up to rounding
    }
  }
  return out;
}

inline NontransverseReport check_nontransverse(const std::vector<Diffeo>& h_list, const SubspaceField& e1, double eta,
                                               double tau, const GridSpec& grid, const Exec& exec = {}) {
  require(eta > 0.0 && eta < 1.0, ErrorCode::InvalidSpec, "eta must lie in (0, 1)");
  require(tau > 0.0, ErrorCode::InvalidSpec, "tau must be positive");
  require(!h_list.empty(), ErrorCode::InvalidSpec, "h_list is empty");
  const ManifoldSpec m = h_list.front().manifold();
  const Point x0 = reference_point(m);
  const int ell = static_cast<int>(e1(x0).cols());
  require(ell >= 1 && ell <= m.dim - 1, ErrorCode::InvalidSpec, "E1 dimension must lie in [1, d-1]");
  bool x_independent = true;
  for (const auto& h : h_list) x_independent = x_independent && h.is_linear_toral();
  const auto cells = nontransverse_grid(h_list, e1, ell, grid, x_independent);
  const double L = static_cast<double>(h_list.size());
  std::vector<std::size_t> counts(cells.size());
  std::vector<double> angle_sums(cells.size());
  parallel_for(cells.size(), exec, [&](std::size_t c) {
    std::size_t count = 0;
    double sum = 0.0;
    for (const auto& h : h_list) {
      const Subspace image = pushforward(h, cells[c]);
      const Subspace target = Subspace::make(m, image.base, e1(image.base));
      const double angle = principal_angle(image, target);
      if (angle > tau) ++count;
      sum += angle;
    }
    counts[c] = count;
    angle_sums[c] = sum;
  });
  NontransverseReport r;
  r.grid_size = cells.size();
  // ties go to the cell whose images sit closest to E1 overall
  std::size_t worst = 0;
  for (std::size_t c = 1; c < cells.size(); ++c)
    if (std::pair{counts[c], angle_sums[c]} < std::pair{counts[worst], angle_sums[worst]}) worst = c;
  r.worst_count = counts[worst];
  r.worst_fraction = static_cast<double>(counts[worst]) / L;
  r.witness = cells[worst];
  r.pass = static_cast<double>(counts[worst]) > (1.0 - eta) * L;
  return r;
}

// ---------------------------------------------------------------------------
// Constant calculus for {g^K h_i}

struct UniformConstants {
  double xi = 0.0;
  double eta_window = 0.0;  // eta must lie in (0, eta_window)
  double c_tau = 0.0;
  double log_c_tau = 0.0;
  double log_a = 0.0;
  double numerator = 0.0;    // (1 - eta) log C_tau + log A
  double denominator = 0.0;  // xi/3 - eta (chi_hat - chi_bar_1)
  int k0 = 0;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  double j_bound = 0.0;  // eta K chi_hat + (1 - eta)(K chi_bar_1 + log C_tau) + log A at K = K0
};

inline double eta_window(double chi_bar_1, double chi_hat_1, double chi_hat) {
  const double gap = chi_hat_1 - chi_bar_1;
  return std::min({gap / (chi_hat - chi_bar_1), -chi_bar_1 / (chi_hat - chi_bar_1), gap / (chi_hat + chi_hat_1),
                   -chi_bar_1 / (chi_hat + chi_hat_1)}) /
         8.0;
}

/// kappa1 and kappa2 at a given K.
inline std::pair<double, double> uniform_kappas(double chi_bar_1, double chi_hat_1, double xi, int k) {
  return {k * (-chi_bar_1 - xi / 3.0), -k * (chi_hat_1 - xi / 3.0)};
}

/// Pure arithmetic; K0 is the smallest integer K with
/// eta K chi_hat + (1-eta)(K chi_bar_1 + log C_tau) + log A < K (chi_bar_1 + xi/3).
inline UniformConstants uniform_constants(const SplittingConstants& c, double eta, double tau, double log_a) {
  validate_constants(c);
  require(c.chi_hat.has_value(), ErrorCode::MissingConstants, "chi_hat is required");
  require(c.chi_bar_1 < 0.0, ErrorCode::BadConstants, "need chi_bar_1 < 0");
  require(*c.chi_hat > 0.0, ErrorCode::BadConstants, "chi_hat must be positive");
  require(tau > 0.0 && tau <= std::numbers::pi / 2, ErrorCode::InvalidSpec, "tau must lie in (0, pi/2]");
  require(std::isfinite(log_a) && log_a >= 0.0, ErrorCode::BadConstants, "log A must be finite and >= 0");
  const double chi_hat = *c.chi_hat;
  UniformConstants u;
  u.xi = 0.5 * std::min(c.chi_hat_1 - c.chi_bar_1, -c.chi_bar_1);
  u.eta_window = eta_window(c.chi_bar_1, c.chi_hat_1, chi_hat);
  require(eta > 0.0 && eta < u.eta_window, ErrorCode::EtaOutOfWindow,
          "eta = " + format_real(eta) + " is outside (0, " + format_real(u.eta_window) + ")");
  u.c_tau = std::numbers::pi / (2.0 * tau);
  u.log_c_tau = std::log(u.c_tau);
  u.log_a = log_a;
  u.numerator = (1.0 - eta) * u.log_c_tau + log_a;
  u.denominator = u.xi / 3.0 - eta * (chi_hat - c.chi_bar_1);
  require(u.denominator > 0.0, ErrorCode::NegativeDenominator, "xi/3 - eta (chi_hat - chi_bar_1) is not positive");
  const double ratio = u.numerator / u.denominator;
  u.k0 = std::max(1, static_cast<int>(std::floor(ratio)) + 1);
  std::tie(u.kappa1, u.kappa2) = uniform_kappas(c.chi_bar_1, c.chi_hat_1, u.xi, u.k0);
  u.j_bound = eta * u.k0 * chi_hat + (1.0 - eta) * (u.k0 * c.chi_bar_1 + u.log_c_tau) + log_a;
  return u;
}

/// g^K h: h first, then K applications of g.
inline Diffeo compose_power_after(const Diffeo& g, int k, const Diffeo& h) {
  return Diffeo(Composite{{h, Diffeo(Composite{{g}, k})}, 1});
}

struct BuildUniformOptions {
  bool enforce_nontransverse = true;
  /// Replaces the computed log A (sup of C^1 norms of h_i and their inverses).
  std::optional<double> log_a_override;
  int c1_grid = 32;
  GridSpec grid{};
  /// Grid check of J < -kappa1 at K0 (J = one-step conditional decrement).
  bool verify_j = true;
  /// Bisect for the smallest K whose grid certificate passes at n0 = 1.
  bool empirical_k = false;
  EstimatorConfig estimator{};
};

struct UniformBuild {
  int k = 0;
  std::vector<Diffeo> maps;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  UniformConstants ledger;
  double log_c1_g = 0.0;
  std::optional<NontransverseReport> nontransverse;
  bool j_verified = false;
  double j_max = 0.0;  // max over the grid of the J estimate at K0
  std::optional<int> empirical_k;
};

inline UniformBuild build_uniform_ifs(const Diffeo& g, const SplittingSpec& sp, const SplittingConstants& c,
                                      const std::vector<Diffeo>& h_list, double eta, double tau,
                                      const BuildUniformOptions& opts = {}) {
  require(!h_list.empty(), ErrorCode::InvalidSpec, "h_list is empty");
  for (const auto& h : h_list)
    require(h.manifold() == g.manifold(), ErrorCode::InvalidSpec, "h_i and g live on different manifolds");
  validate_constants(c);
  require(c.chi_bar_1 < 0.0, ErrorCode::BadConstants, "need chi_bar_1 < 0");
  require(c.chi_hat.has_value(), ErrorCode::MissingConstants, "chi_hat is required");
  UniformBuild out;
  out.log_c1_g = std::log(c1_norm_bound(g, opts.c1_grid).inflated);
  require(*c.chi_hat >= out.log_c1_g, ErrorCode::BadConstants,
          "chi_hat = " + format_real(*c.chi_hat) + " is below log |g|_C1 = " + format_real(out.log_c1_g));
  double log_a = 0.0;
  if (opts.log_a_override) {
    log_a = *opts.log_a_override;
  } else {
    for (const auto& h : h_list) log_a = std::max(log_a, std::log(c1_norm_bound(h, opts.c1_grid).inflated));
  }
  out.ledger = uniform_constants(c, eta, tau, log_a);
  if (opts.enforce_nontransverse) {
    out.nontransverse = check_nontransverse(h_list, sp.e1, eta, tau, opts.grid, opts.estimator.exec);
    require(out.nontransverse->pass, ErrorCode::NontransverseFailed,
            "h_list is not eta-nontransverse to E1 at tau = " + format_real(tau) + " (worst fraction " +
                format_real(out.nontransverse->worst_fraction) + ")");
  }
  out.k = out.ledger.k0;
  out.kappa1 = out.ledger.kappa1;
  out.kappa2 = out.ledger.kappa2;
  auto family = [&](int k) {
    std::vector<Diffeo> maps;
    for (const auto& h : h_list) maps.push_back(compose_power_after(g, k, h));
    return maps;
  };
  out.maps = family(out.k);
  const int b = static_cast<int>(sp.e1(reference_point(g.manifold())).cols());
  if (opts.verify_j) {
    const IfsSpec ifs(out.maps);
    const auto cells = grassmann_grid(g.manifold(), g.manifold().dim - b, opts.grid, ifs.is_linear_toral());
    std::vector<double> js(cells.size());
    parallel_for(cells.size(), opts.estimator.exec, [&](std::size_t i) {
      ExactOptions eo = opts.estimator.exact;
      eo.exec = Exec{1};
      js[i] = exact_C(ifs, cells[i], 1, eo).mean;
    });
    out.j_max = *std::max_element(js.begin(), js.end());
    out.j_verified = out.j_max < -out.kappa1;
  }
  if (opts.empirical_k) {
    auto passes = [&](int k) {
      const auto [k1, k2] = uniform_kappas(c.chi_bar_1, c.chi_hat_1, out.ledger.xi, k);
      const IfsSpec ifs(family(k));
      return certify_uniform(ifs, b, 1, k1, k2, opts.grid, opts.estimator).verdict == Verdict::Certified;
    };
    int lo = 0, hi = out.k;  // invariant: hi passes or hi == K0
    if (passes(hi)) {
      while (hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        if (passes(mid)) hi = mid;
        else lo = mid;
      }
      out.empirical_k = hi;
    }
  }
  return out;
}

}  // namespace ifscert
