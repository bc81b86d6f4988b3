#pragma once

// Finite sampling plans over M and over Gr(M, k). Certificates are grid
// certificates: they hold on these samples plus whatever margin they report.

#include "ifscert/geometry.hpp"
#include "ifscert/grassmann.hpp"
#include "ifscert/rng.hpp"

#include <cstdint>
#include <numbers>
#include <vector>

namespace ifscert {

struct GridSpec {
  /// Torus: lattice points per axis. Sphere: number of points.
  int point_resolution = 8;
  /// d = 2 lines: uniform angles pi*j/count. Otherwise: seeded random subspaces.
  int subspace_count = 720;
  std::uint64_t seed = 0;
  /// Extra subspaces (frame coordinates) added at every point, e.g. eigenlines.
  std::vector<Matrix> extra_subspaces;
};

inline void validate_grid(const GridSpec& g) {
  require(g.point_resolution >= 1, ErrorCode::InvalidSpec, "grid point_resolution must be >= 1");
  require(g.subspace_count >= 1, ErrorCode::InvalidSpec, "grid subspace_count must be >= 1");
}

/// Base point used when the quantity under test does not depend on x.
inline Point reference_point(const ManifoldSpec& m) {
  Vector v = Vector::Zero(m.ambient_dim());
  if (m.is_sphere()) v(m.ambient_dim() - 1) = 1.0;
  return Point::on(m, v);
}

inline std::vector<Point> grid_points(const ManifoldSpec& m, const GridSpec& g, bool x_independent) {
  validate_grid(g);
  if (x_independent) return {reference_point(m)};
  if (m.is_torus()) return points::torus_lattice(m, g.point_resolution);
  return points::sphere_points(m, g.point_resolution, g.seed);
}

/// Frame-coordinate bases of k-planes in R^d, independent of the base point.
inline std::vector<Matrix> subspace_bases(int d, int k, const GridSpec& g) {
  validate_grid(g);
  std::vector<Matrix> out;
  if (d == 2 && k == 1) {
    for (int j = 0; j < g.subspace_count; ++j) {
      const double theta = std::numbers::pi * j / g.subspace_count;
      Matrix v(2, 1);
      v << std::cos(theta), std::sin(theta);
      out.push_back(v);
    }
  } else {
    // coordinate planes first, then Gaussian samples
    for (int j = 0; j + k <= d && static_cast<int>(out.size()) < g.subspace_count; ++j)
      out.push_back(Matrix::Identity(d, d).middleCols(j, k));
    for (int j = 0; static_cast<int>(out.size()) < g.subspace_count; ++j) {
      RandomStream rng(g.seed, static_cast<std::uint64_t>(j));
      Matrix raw(d, k);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < k; ++c) raw(r, c) = rng.normal();
      out.push_back(linalg::qr_positive(raw).q);
    }
  }
  for (const auto& e : g.extra_subspaces) {
    require(e.rows() == d && e.cols() == k, ErrorCode::InvalidSpec, "extra grid subspace has the wrong shape");
    out.push_back(e);
  }
  return out;
}

inline std::vector<Subspace> grassmann_grid(const ManifoldSpec& m, int k, const GridSpec& g, bool x_independent) {
  std::vector<Subspace> out;
  const auto bases = subspace_bases(m.dim, k, g);
  for (const auto& x : grid_points(m, g, x_independent))
    for (const auto& b : bases) out.push_back(Subspace::make(m, x, b));
  return out;
}

}  // namespace ifscert
