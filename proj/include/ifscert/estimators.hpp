#pragma once

// Expectations over random words of the transverse-growth and
// tangential-contraction kernels, their sigma-moments, Lyapunov spectra and
// the angle-decay diagnostic. All kernels stay in log space until the end.

#include "ifscert/error.hpp"
#include "ifscert/grassmann.hpp"
#include "ifscert/linalg.hpp"
#include "ifscert/parallel.hpp"
#include "ifscert/randomwords.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace ifscert {

enum class EstimateMode { MonteCarlo, Exact };

inline std::string to_string(EstimateMode m) { return m == EstimateMode::Exact ? "Exact" : "MonteCarlo"; }

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::uint64_t samples = 0;
  EstimateMode mode = EstimateMode::MonteCarlo;
};

enum class MomentSide { Transverse, TangentialInverse };

struct ExactOptions {
  std::uint64_t enumeration_cap = std::uint64_t{1} << 20;
  /// Above the cap, constant-differential IFSs on surfaces fall back to a
  /// dynamic program over lines; this bounds its state count.
  std::size_t max_line_states = 1u << 20;
  double merge_angle = 1e-12;
  Exec exec{};
};

namespace detail {

/// Per-word kernels: log sup |P Df v| over E-perp and log inf |Df u| over E.
struct KernelPair {
  double log_transverse = 0.0;
  double log_tangential = 0.0;
};

enum class KernelKind { C, D, Moment };

struct KernelSelect {
  KernelKind kind = KernelKind::C;
  MomentSide side = MomentSide::Transverse;
  double sigma = 0.0;

  double operator()(const KernelPair& k) const {
    switch (kind) {
      case KernelKind::C: return k.log_transverse;
      case KernelKind::D: return k.log_tangential;
      case KernelKind::Moment:
        return side == MomentSide::Transverse ? std::exp(sigma * k.log_transverse)
                                              : std::exp(-sigma * k.log_tangential);
    }
    return 0.0;
  }
};

/// Accumulates the cocycle restricted to what the kernels need. Lines in
/// dimension 2 use log T = sum(log|det M| - log|M e|); otherwise QR.
class KernelAccumulator {
 public:
  explicit KernelAccumulator(const Subspace& s)
      : k_(s.dim()), line_(s.ambient() == 2 && s.dim() == 1) {
    if (line_) {
      e0_ = s.basis(0, 0);
      e1_ = s.basis(1, 0);
    } else {
      cocycle_.emplace(entry(s));
    }
  }

  void push(const Matrix& step) {
    if (line_) {
      const double v0 = step(0, 0) * e0_ + step(0, 1) * e1_;
      const double v1 = step(1, 0) * e0_ + step(1, 1) * e1_;
      const double norm = std::hypot(v0, v1);
      const double det = std::abs(step(0, 0) * step(1, 1) - step(0, 1) * step(1, 0));
      require(norm > 0.0 && det > 0.0 && std::isfinite(norm), ErrorCode::RankCollapse, "cocycle step lost rank");
      log_tangential_ += std::log(norm);
      log_det_ += std::log(det);
      e0_ = v0 / norm;
      e1_ = v1 / norm;
      return;
    }
    cocycle_->push(step);
  }

  KernelPair kernels() const {
    if (line_) return {log_det_ - log_tangential_, log_tangential_};
    return {cocycle_->log_transverse_growth(k_), cocycle_->log_tangential_contraction(k_)};
  }

  /// Current image direction (line mode only).
  double e0() const { return e0_; }
  double e1() const { return e1_; }

 private:
  static Matrix entry(const Subspace& s) {
    Matrix q(s.ambient(), s.ambient());
    q << s.basis, s.complement();
    return q;
  }

  int k_;
  bool line_;
  double e0_ = 0.0, e1_ = 0.0;
  double log_tangential_ = 0.0;
  double log_det_ = 0.0;
  std::optional<CocycleProduct> cocycle_;
};

/// Frame differentials of every letter as factor lists, when they do not depend on x.
struct StepTable {
  bool constant = false;
  std::vector<std::vector<Matrix>> factors;
};

inline StepTable step_table(const IfsSpec& ifs, const Point& x) {
  StepTable t;
  t.constant = true;
  for (const auto& f : ifs.maps()) t.constant = t.constant && f.has_constant_differential();
  if (!t.constant) return t;
  t.factors.resize(ifs.size());
  for (std::size_t i = 0; i < ifs.size(); ++i)
    ifs.map(i).for_each_factor(x, [&](const Matrix& m) { t.factors[i].push_back(m); });
  return t;
}

inline void check_inputs(const IfsSpec& ifs, const Subspace& s, int n) {
  require(n >= 1, ErrorCode::InvalidSpec, "n must be at least 1");
  require(s.ambient() == ifs.manifold().dim, ErrorCode::InvalidSpec, "subspace dimension does not match the IFS");
  validate_point(ifs.manifold(), s.base);
}

inline void check_distribution(const IfsSpec& ifs, const WordDistribution& dist) {
  require(dist.m == ifs.size(), ErrorCode::InvalidSpec,
          "word distribution has " + std::to_string(dist.m) + " letters but the IFS has " +
              std::to_string(ifs.size()) + " maps");
}

/// Applies one letter; returns the new point (unchanged when the table is constant).
template <class Sink>
Point step_letter(const IfsSpec& ifs, const StepTable& table, std::uint32_t letter, const Point& y, Sink&& sink) {
  if (table.constant) {
    for (const auto& m : table.factors[letter]) sink(m);
    return y;
  }
  return ifs.map(letter).for_each_factor(y, sink);
}

inline KernelPair word_kernels(const IfsSpec& ifs, const StepTable& table, const Subspace& s,
                               const std::uint32_t* letters, int n) {
  KernelAccumulator acc(s);
  Point y = s.base;
  for (int k = 0; k < n; ++k)
    y = step_letter(ifs, table, letters[k], y, [&](const Matrix& m) { acc.push(m); });
  return acc.kernels();
}

inline void sample_letters(const WordDistribution& dist, std::uint64_t stream, std::vector<std::uint32_t>& out) {
  RandomStream rng(dist.seed, stream);
  for (auto& l : out) l = static_cast<std::uint32_t>(rng.uniform_index(dist.m));
}

inline Estimate summarize(std::vector<double>& values, EstimateMode mode, std::uint64_t samples) {
  for (double v : values) require(std::isfinite(v), ErrorCode::NaNGuard, "non-finite kernel value");
  Estimate e;
  e.mode = mode;
  e.samples = samples;
  const double n = static_cast<double>(values.size());
  e.mean = pairwise_sum(values) / n;
  if (mode == EstimateMode::MonteCarlo && values.size() > 1) {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - e.mean) * (values[i] - e.mean);
    e.stderr_ = std::sqrt(pairwise_sum(sq) / (n - 1.0) / n);
  }
  return e;
}

inline std::vector<KernelPair> sample_kernels(const IfsSpec& ifs, const Subspace& s, int n, std::uint64_t samples,
                                              const WordDistribution& dist, const Exec& exec) {
  check_inputs(ifs, s, n);
  check_distribution(ifs, dist);
  require(samples >= 1, ErrorCode::InvalidSpec, "samples must be at least 1");
  const StepTable table = step_table(ifs, s.base);
  std::vector<KernelPair> out(samples);
  parallel_for(samples, exec, [&](std::size_t i) {
    std::vector<std::uint32_t> letters(static_cast<std::size_t>(n));
    sample_letters(dist, i, letters);
    out[i] = word_kernels(ifs, table, s, letters.data(), n);
  });
  return out;
}

inline std::uint64_t word_count(std::uint64_t m, int n, std::uint64_t cap) {
  std::uint64_t total = 1;
  for (int k = 0; k < n; ++k) {
    if (total > cap / std::max<std::uint64_t>(m, 1)) return cap + 1;
    total *= m;
  }
  return total;
}

/// All m^n words in lexicographic order, kernels shared along prefixes.
inline std::vector<KernelPair> enumerate_kernels(const IfsSpec& ifs, const Subspace& s, int n, const Exec& exec) {
  const StepTable table = step_table(ifs, s.base);
  const std::uint64_t m = ifs.size();
  const std::uint64_t total = word_count(m, n, std::numeric_limits<std::uint64_t>::max() / 2);
  std::vector<KernelPair> out(total);
  // Split at a prefix depth so that tasks can run in parallel.
  int depth = 0;
  std::uint64_t tasks = 1;
  while (depth < n && tasks < 64) {
    tasks *= m;
    ++depth;
  }
  const std::uint64_t leaves_per_task = total / tasks;
  parallel_for(tasks, exec, [&](std::size_t task) {
    std::vector<std::uint32_t> prefix(static_cast<std::size_t>(depth));
    std::uint64_t code = task;
    for (int k = depth - 1; k >= 0; --k) {
      prefix[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(code % m);
      code /= m;
    }
    KernelAccumulator root(s);
    Point y = s.base;
    for (auto l : prefix) y = step_letter(ifs, table, l, y, [&](const Matrix& mat) { root.push(mat); });
    std::uint64_t next = task * leaves_per_task;
    // Explicit DFS stack of (accumulator, point) per depth.
    std::vector<KernelAccumulator> accs(static_cast<std::size_t>(n - depth + 1), root);
    std::vector<Point> pts(static_cast<std::size_t>(n - depth + 1), y);
    std::vector<std::uint32_t> letter(static_cast<std::size_t>(n - depth + 1), 0);
    const int rest = n - depth;
    if (rest == 0) {
      out[next] = root.kernels();
      return;
    }
    int level = 0;
    letter[0] = 0;
    while (level >= 0) {
      if (letter[static_cast<std::size_t>(level)] >= m) {
        --level;
        if (level >= 0) ++letter[static_cast<std::size_t>(level)];
        continue;
      }
      const auto lv = static_cast<std::size_t>(level);
      accs[lv + 1] = accs[lv];
      pts[lv + 1] = step_letter(ifs, table, letter[lv], pts[lv], [&](const Matrix& mat) { accs[lv + 1].push(mat); });
      if (level + 1 == rest) {
        out[next++] = accs[lv + 1].kernels();
        ++letter[lv];
      } else {
        ++level;
        letter[lv + 1] = 0;
      }
    }
  });
  return out;
}

/// Exact expectations for constant-differential IFSs on surfaces, by a
/// forward dynamic program over image lines. States whose lines agree within
/// `merge_angle` are merged; masses are carried so merging is exact for
/// additive (log) and multiplicative (moment) functionals.
struct LineState {
  double angle;  // in [0, pi)
  double e0, e1;
  double prob;
  double log_sum;           // E[1{state} * accumulated kernel]
  double log_moment_mass;   // log E[1{state} * exp(accumulated moment exponent)]
};

inline double line_angle(double e0, double e1) {
  double a = std::atan2(e1, e0);
  if (a < 0) a += std::numbers::pi;
  if (a >= std::numbers::pi) a -= std::numbers::pi;
  return a;
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline bool lumpable(const IfsSpec& ifs, const Subspace& s) {
  if (s.ambient() != 2 || s.dim() != 1) return false;
  for (const auto& f : ifs.maps())
    if (!f.has_constant_differential()) return false;
  return true;
}

inline double lumped_expectation(const IfsSpec& ifs, const Subspace& s, int n, const KernelSelect& select,
                                 const ExactOptions& opts) {
  require(lumpable(ifs, s), ErrorCode::EnumerationTooLarge,
          "word count exceeds the enumeration cap and the IFS is not lumpable");
  const StepTable table = step_table(ifs, s.base);
  const double m = static_cast<double>(ifs.size());
  const double log_m = std::log(m);
  const bool transverse = select.kind == KernelKind::C ||
                          (select.kind == KernelKind::Moment && select.side == MomentSide::Transverse);
  const double sigma = select.kind == KernelKind::Moment
                           ? (select.side == MomentSide::Transverse ? select.sigma : -select.sigma)
                           : 0.0;
  std::vector<LineState> states{{line_angle(s.basis(0, 0), s.basis(1, 0)), s.basis(0, 0), s.basis(1, 0), 1.0, 0.0,
                                 0.0}};
  for (int k = 0; k < n; ++k) {
    std::vector<LineState> children;
    children.reserve(states.size() * ifs.size());
    for (const auto& st : states) {
      for (std::size_t i = 0; i < ifs.size(); ++i) {
        double e0 = st.e0, e1 = st.e1, lt = 0.0, ld = 0.0;
        for (const auto& mat : table.factors[i]) {
          const double v0 = mat(0, 0) * e0 + mat(0, 1) * e1;
          const double v1 = mat(1, 0) * e0 + mat(1, 1) * e1;
          const double norm = std::hypot(v0, v1);
          const double det = std::abs(mat(0, 0) * mat(1, 1) - mat(0, 1) * mat(1, 0));
          require(norm > 0.0 && det > 0.0, ErrorCode::RankCollapse, "cocycle step lost rank");
          lt += std::log(norm);
          ld += std::log(det);
          e0 = v0 / norm;
          e1 = v1 / norm;
        }
        const double kernel = transverse ? ld - lt : lt;
        const double p = st.prob / m;
        children.push_back({line_angle(e0, e1), e0, e1, p, st.log_sum / m + p * kernel,
                            st.log_moment_mass - log_m + sigma * kernel});
      }
    }
    std::stable_sort(children.begin(), children.end(),
                     [](const LineState& a, const LineState& b) { return a.angle < b.angle; });
    std::vector<LineState> merged;
    for (const auto& c : children) {
      if (!merged.empty() && c.angle - merged.back().angle <= opts.merge_angle) {
        auto& t = merged.back();
        t.prob += c.prob;
        t.log_sum += c.log_sum;
        t.log_moment_mass = log_add(t.log_moment_mass, c.log_moment_mass);
      } else {
        merged.push_back(c);
      }
    }
    // Lines near angle pi wrap around to 0.
    if (merged.size() > 1 && merged.back().angle - std::numbers::pi + opts.merge_angle >= merged.front().angle) {
      auto& t = merged.front();
      t.prob += merged.back().prob;
      t.log_sum += merged.back().log_sum;
      t.log_moment_mass = log_add(t.log_moment_mass, merged.back().log_moment_mass);
      merged.pop_back();
    }
    require(merged.size() <= opts.max_line_states, ErrorCode::EnumerationTooLarge,
            "line dynamic program exceeded its state budget");
    states = std::move(merged);
  }
  if (select.kind == KernelKind::Moment) {
    double acc = -std::numeric_limits<double>::infinity();
    for (const auto& st : states) acc = log_add(acc, st.log_moment_mass);
    return std::exp(acc);
  }
  std::vector<double> parts;
  for (const auto& st : states) parts.push_back(st.log_sum);
  return pairwise_sum(parts);
}

inline Estimate exact_estimate(const IfsSpec& ifs, const Subspace& s, int n, const KernelSelect& select,
                               const ExactOptions& opts) {
  check_inputs(ifs, s, n);
  const std::uint64_t m = ifs.size();
  const std::uint64_t count = word_count(m, n, opts.enumeration_cap);
  if (count <= opts.enumeration_cap) {
    const auto kernels = enumerate_kernels(ifs, s, n, opts.exec);
    std::vector<double> values(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) values[i] = select(kernels[i]);
    return summarize(values, EstimateMode::Exact, count);
  }
  if (!lumpable(ifs, s))
    fail(ErrorCode::EnumerationTooLarge, std::to_string(m) + "^" + std::to_string(n) +
                                             " words exceed the enumeration cap of " +
                                             std::to_string(opts.enumeration_cap));
  Estimate e;
  e.mode = EstimateMode::Exact;
  e.mean = lumped_expectation(ifs, s, n, select, opts);
  require(std::isfinite(e.mean), ErrorCode::NaNGuard, "non-finite exact expectation");
  const double total = std::pow(static_cast<double>(m), n);
  e.samples = total >= 1.8e19 ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(total);
  return e;
}

inline Estimate mc_estimate(const IfsSpec& ifs, const Subspace& s, int n, std::uint64_t samples,
                            const WordDistribution& dist, const KernelSelect& select, const Exec& exec) {
  const auto kernels = sample_kernels(ifs, s, n, samples, dist, exec);
  std::vector<double> values(kernels.size());
  for (std::size_t i = 0; i < kernels.size(); ++i) values[i] = select(kernels[i]);
  return summarize(values, EstimateMode::MonteCarlo, samples);
}

}  // namespace detail

/// C(x,E,n): expected log transverse growth over words of length n.
inline Estimate estimate_C(const IfsSpec& ifs, const Subspace& s, int n, std::uint64_t samples,
                           const WordDistribution& dist, const Exec& exec = {}) {
  return detail::mc_estimate(ifs, s, n, samples, dist, {detail::KernelKind::C}, exec);
}

/// D(x,E,n): expected log tangential contraction.
inline Estimate estimate_D(const IfsSpec& ifs, const Subspace& s, int n, std::uint64_t samples,
                           const WordDistribution& dist, const Exec& exec = {}) {
  return detail::mc_estimate(ifs, s, n, samples, dist, {detail::KernelKind::D}, exec);
}

inline Estimate exact_C(const IfsSpec& ifs, const Subspace& s, int n, const ExactOptions& opts = {}) {
  return detail::exact_estimate(ifs, s, n, {detail::KernelKind::C}, opts);
}

inline Estimate exact_D(const IfsSpec& ifs, const Subspace& s, int n, const ExactOptions& opts = {}) {
  return detail::exact_estimate(ifs, s, n, {detail::KernelKind::D}, opts);
}

inline Estimate sigma_moment(const IfsSpec& ifs, const Subspace& s, int n, double sigma, MomentSide side,
                             std::uint64_t samples, const WordDistribution& dist, const Exec& exec = {}) {
  require(sigma > 0.0, ErrorCode::InvalidSpec, "sigma must be positive");
  return detail::mc_estimate(ifs, s, n, samples, dist, {detail::KernelKind::Moment, side, sigma}, exec);
}

inline Estimate exact_sigma_moment(const IfsSpec& ifs, const Subspace& s, int n, double sigma, MomentSide side,
                                   const ExactOptions& opts = {}) {
  require(sigma > 0.0, ErrorCode::InvalidSpec, "sigma must be positive");
  return detail::exact_estimate(ifs, s, n, {detail::KernelKind::Moment, side, sigma}, opts);
}

struct LyapunovOptions {
  /// Steps discarded before measuring, so the QR frame has aligned with the
  /// Oseledets filtration; without it logR/n carries an O(1/n) start-up bias.
  int burn_in = 64;
  Exec exec{};
};

/// Mean exponents per rank, sorted descending.
inline std::vector<Estimate> lyapunov_spectrum(const IfsSpec& ifs, const Point& x, int n, std::uint64_t samples,
                                               const WordDistribution& dist, const LyapunovOptions& opts = {}) {
  require(n >= 10, ErrorCode::InvalidSpec, "lyapunov_spectrum needs n >= 10");
  require(samples >= 1, ErrorCode::InvalidSpec, "samples must be at least 1");
  require(opts.burn_in >= 0, ErrorCode::InvalidSpec, "burn-in must be non-negative");
  detail::check_distribution(ifs, dist);
  validate_point(ifs.manifold(), x);
  const int d = ifs.manifold().dim;
  const detail::StepTable table = detail::step_table(ifs, x);
  std::vector<Vector> per_sample(samples);
  parallel_for(samples, opts.exec, [&](std::size_t i) {
    std::vector<std::uint32_t> letters(static_cast<std::size_t>(opts.burn_in + n));
    detail::sample_letters(dist, i, letters);
    CocycleProduct warm = CocycleProduct::identity(d);
    Point y = x;
    int k = 0;
    for (; k < opts.burn_in; ++k)
      y = detail::step_letter(ifs, table, letters[k], y, [&](const Matrix& m) { warm.push(m); });
    CocycleProduct measured(warm.q());
    for (; k < opts.burn_in + n; ++k)
      y = detail::step_letter(ifs, table, letters[k], y, [&](const Matrix& m) { measured.push(m); });
    Vector ex = measured.log_r() / static_cast<double>(n);
    std::sort(ex.data(), ex.data() + ex.size(), std::greater<>());
    per_sample[i] = ex;
  });
  std::vector<Estimate> out;
  for (int r = 0; r < d; ++r) {
    std::vector<double> values(samples);
    for (std::size_t i = 0; i < samples; ++i) values[i] = per_sample[i](r);
    out.push_back(detail::summarize(values, EstimateMode::MonteCarlo, samples));
  }
  return out;
}

struct AngleDecayPoint {
  int k = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// (k, mean of (1/k) log angle(Df^k P, Df^k Q)) for k = 1..n.
/// A subspace contracted by the dynamics is only tracked to rounding error,
/// so its image drifts towards the expanding direction after a few dozen steps.
inline std::vector<AngleDecayPoint> angle_decay(const IfsSpec& ifs, const Subspace& p, const Subspace& q, int n,
                                                std::uint64_t samples, const WordDistribution& dist,
                                                const Exec& exec = {}) {
  detail::require_same_base(p, q);
  detail::check_inputs(ifs, p, n);
  detail::check_distribution(ifs, dist);
  require(q.ambient() == p.ambient(), ErrorCode::InvalidSpec, "subspaces live in different dimensions");
  require(principal_angle(p, q) > 0.0, ErrorCode::InvalidSpec, "angle_decay needs subspaces with disjoint spans");
  require(samples >= 1, ErrorCode::InvalidSpec, "samples must be at least 1");
  const detail::StepTable table = detail::step_table(ifs, p.base);
  std::vector<std::vector<double>> rows(samples, std::vector<double>(static_cast<std::size_t>(n)));
  parallel_for(samples, exec, [&](std::size_t i) {
    std::vector<std::uint32_t> letters(static_cast<std::size_t>(n));
    detail::sample_letters(dist, i, letters);
    Matrix a = p.basis, b = q.basis;
    Point y = p.base;
    auto renorm = [](Matrix& m) {
      const linalg::QrFactors f = linalg::qr_positive(m);
      for (Eigen::Index j = 0; j < f.r.rows(); ++j)
        require(f.r(j, j) > 0.0 && std::isfinite(f.r(j, j)), ErrorCode::RankCollapse, "subspace image lost rank");
      m = f.q;
    };
    for (int k = 0; k < n; ++k) {
      y = detail::step_letter(ifs, table, letters[k], y, [&](const Matrix& m) {
        a = m * a;
        b = m * b;
        renorm(a);
        renorm(b);
      });
      const double angle = detail::principal_angles(a, b).smallest;
      rows[i][static_cast<std::size_t>(k)] = std::log(angle) / (k + 1);
    }
  });
  std::vector<AngleDecayPoint> out;
  for (int k = 0; k < n; ++k) {
    std::vector<double> values(samples);
    for (std::size_t i = 0; i < samples; ++i) values[i] = rows[i][static_cast<std::size_t>(k)];
    const Estimate e = detail::summarize(values, EstimateMode::MonteCarlo, samples);
    out.push_back({k + 1, e.mean, e.stderr_});
  }
  return out;
}

/// Round-trip exact decimal formatting used by all text outputs.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_header() { return "functional,n,mean,stderr,samples,mode,seed"; }

inline std::string csv_row(const std::string& functional, int n, const Estimate& e, std::uint64_t seed) {
  return functional + "," + std::to_string(n) + "," + format_real(e.mean) + "," + format_real(e.stderr_) + "," +
         std::to_string(e.samples) + "," + to_string(e.mode) + "," + std::to_string(seed);
}

}  // namespace ifscert
