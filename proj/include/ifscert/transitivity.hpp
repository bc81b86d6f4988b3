#pragma once

// Empirical probe of transitivity: follow one random word's orbit and count
// how many eps-balls around a fixed eps/2-net it enters. A probe, never a proof.

#include "ifscert/error.hpp"
#include "ifscert/geometry.hpp"
#include "ifscert/parallel.hpp"
#include "ifscert/randomwords.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

namespace ifscert {

struct DensityReport {
  double epsilon = 0.0;
  std::size_t balls_total = 0;
  std::size_t balls_visited = 0;
  std::int64_t n_steps = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  /// (n, coverage) at the requested checkpoints along the same word.
  std::vector<std::pair<std::int64_t, double>> curve;

  double coverage() const {
    return balls_total == 0 ? 0.0 : static_cast<double>(balls_visited) / static_cast<double>(balls_total);
  }
};

namespace detail {

/// Net centers plus a lookup of the centers within eps of a point.
class BallNet {
 public:
  BallNet(const ManifoldSpec& m, double eps) : m_(m), eps_(eps) {
    if (m.is_torus()) {
      // lattice spacing 1/r with covering radius sqrt(d) / (2r) <= eps/2
      r_ = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m.dim)) / eps - 1e-12));
      r_ = std::max(r_, 1);
      centers_ = points::torus_lattice(m, r_);
    } else {
      const auto count = static_cast<int>(std::ceil(sphere_count(m, eps)));
      centers_ = points::sphere_points(m, count, 0);
      cell_ = eps;
      for (std::size_t i = 0; i < centers_.size(); ++i) buckets_[key(cell_of(centers_[i].coords()))].push_back(i);
    }
  }

  std::size_t size() const { return centers_.size(); }

  template <class Mark>
  void visit(const Point& x, Mark&& mark) const {
    if (m_.is_torus()) {
      visit_torus(x, mark);
      return;
    }
    const std::vector<long> base = cell_of(x.coords());
    std::vector<long> offset(base.size(), -1);
    for (;;) {
      std::vector<long> c(base.size());
      for (std::size_t i = 0; i < base.size(); ++i) c[i] = base[i] + offset[i];
      if (const auto it = buckets_.find(key(c)); it != buckets_.end())
        for (std::size_t idx : it->second)
          if (distance(m_, x, centers_[idx]) <= eps_) mark(idx);
      std::size_t i = 0;
      while (i < offset.size() && offset[i] == 1) offset[i++] = -1;
      if (i == offset.size()) break;
      ++offset[i];
    }
  }

 private:
  /// S^2: Fibonacci points at density 32 / eps^2 (cells of circumradius about 0.38 eps).
  /// Other spheres: seeded random points, twice the volume ratio, without a covering guarantee.
  static double sphere_count(const ManifoldSpec& m, double eps) {
    if (m.dim == 2) return 32.0 / (eps * eps);
    const double d = m.dim;
    const double area = 2.0 * std::pow(std::numbers::pi, (d + 1) / 2) / std::tgamma((d + 1) / 2);
    const double ball = std::pow(std::numbers::pi, d / 2) / std::tgamma(d / 2 + 1) * std::pow(eps / 2, d);
    return 2.0 * area / ball;
  }

  std::vector<long> cell_of(const Vector& v) const {
    std::vector<long> c(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) c[static_cast<std::size_t>(i)] = std::lround(std::floor((v(i) + 1.0) / cell_));
    return c;
  }

  static std::uint64_t key(const std::vector<long>& c) {
    std::uint64_t k = 1469598103934665603ULL;
    for (long v : c) k = (k ^ static_cast<std::uint64_t>(v + 1024)) * 1099511628211ULL;
    return k;
  }

  template <class Mark>
  void visit_torus(const Point& x, Mark& mark) const {
    const int d = m_.dim;
    // candidate lattice indices per axis, wrapped and deduplicated
    std::vector<std::vector<int>> axes(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const long lo = static_cast<long>(std::floor((x[i] - eps_) * r_));
      const long hi = static_cast<long>(std::ceil((x[i] + eps_) * r_));
      auto& ax = axes[static_cast<std::size_t>(i)];
      for (long j = lo; j <= hi && static_cast<int>(ax.size()) < r_; ++j) {
        const int w = static_cast<int>(((j % r_) + r_) % r_);
        if (std::find(ax.begin(), ax.end(), w) == ax.end()) ax.push_back(w);
      }
    }
    std::vector<std::size_t> pos(static_cast<std::size_t>(d), 0);
    for (;;) {
      // torus_lattice orders the first axis fastest
      std::size_t idx = 0, stride = 1;
      for (int i = 0; i < d; ++i) {
        idx += stride * static_cast<std::size_t>(axes[static_cast<std::size_t>(i)][pos[static_cast<std::size_t>(i)]]);
        stride *= static_cast<std::size_t>(r_);
      }
      if (torus_displacement(x, centers_[idx]).norm() <= eps_) mark(idx);
      std::size_t i = 0;
      while (i < pos.size() && pos[i] + 1 == axes[i].size()) pos[i++] = 0;
      if (i == pos.size()) break;
      ++pos[i];
    }
  }

  ManifoldSpec m_;
  double eps_;
  int r_ = 0;
  double cell_ = 1.0;
  std::vector<Point> centers_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

}  // namespace detail

/// Orbit x0, f_{w1} x0, ..., of one word of length n (n + 1 points).
inline DensityReport orbit_density(const IfsSpec& ifs, const Point& x0, std::int64_t n, double epsilon,
                                   const WordDistribution& dist, std::uint64_t stream = 0,
                                   std::vector<std::int64_t> checkpoints = {}) {
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::InvalidSpec, "epsilon must be positive");
  require(n >= 1, ErrorCode::InvalidSpec, "n must be >= 1");
  require(dist.m == ifs.size(), ErrorCode::InvalidSpec, "word distribution size differs from the IFS");
  const ManifoldSpec m = ifs.manifold();
  validate_point(m, x0);
  std::sort(checkpoints.begin(), checkpoints.end());
  const detail::BallNet net(m, epsilon);
  std::vector<char> seen(net.size(), 0);
  DensityReport r;
  r.epsilon = epsilon;
  r.balls_total = net.size();
  r.n_steps = n;
  r.seed = dist.seed;
  r.stream = stream;
  auto mark = [&](std::size_t idx) {
    if (!seen[idx]) seen[idx] = 1, ++r.balls_visited;
  };
  const Word w = sample_word(dist, static_cast<std::size_t>(n), stream);
  Point x = x0;
  net.visit(x, mark);
  auto next = checkpoints.begin();
  for (std::int64_t k = 1; k <= n; ++k) {
    x = ifs.map(w.letters[static_cast<std::size_t>(k - 1)]).apply(x);
    net.visit(x, mark);
    for (; next != checkpoints.end() && *next <= k; ++next)
      if (*next == k) r.curve.emplace_back(k, r.coverage());
  }
  return r;
}

/// Independent words (streams 0..count-1), run in parallel.
inline std::vector<DensityReport> orbit_density_words(const IfsSpec& ifs, const Point& x0, std::int64_t n,
                                                      double epsilon, const WordDistribution& dist, std::size_t count,
                                                      const Exec& exec = {}) {
  std::vector<DensityReport> out(count);
  parallel_for(count, exec, [&](std::size_t i) { out[i] = orbit_density(ifs, x0, n, epsilon, dist, i); });
  return out;
}

inline std::string density_csv_header() { return "epsilon,n,coverage,seed"; }

}  // namespace ifscert
