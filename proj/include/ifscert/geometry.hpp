#pragma once

// Compact model manifolds: the flat torus T^d = R^d / Z^d and the unit
// sphere S^d in R^{d+1}. Points carry ambient coordinates; tangent vectors
// are expressed in a deterministic orthonormal frame at each point.

#include "ifscert/error.hpp"
#include "ifscert/linalg.hpp"
#include "ifscert/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace ifscert {

enum class ManifoldKind { Torus, Sphere };

struct ManifoldSpec {
  ManifoldKind kind = ManifoldKind::Torus;
  int dim = 2;

  static ManifoldSpec torus(int d) { return checked({ManifoldKind::Torus, d}); }
  static ManifoldSpec sphere(int d) { return checked({ManifoldKind::Sphere, d}); }

  int ambient_dim() const { return kind == ManifoldKind::Sphere ? dim + 1 : dim; }
  bool is_torus() const { return kind == ManifoldKind::Torus; }
  bool is_sphere() const { return kind == ManifoldKind::Sphere; }

  friend bool operator==(const ManifoldSpec&, const ManifoldSpec&) = default;

 private:
  static ManifoldSpec checked(ManifoldSpec m) {
    require(m.dim >= 1, ErrorCode::InvalidSpec, "manifold dimension must be >= 1");
    return m;
  }
};

inline std::string to_string(const ManifoldSpec& m) {
  return (m.is_torus() ? "T^" : "S^") + std::to_string(m.dim);
}

/// A point of M in ambient coordinates. Torus coordinates are reduced to
/// [0,1) at construction; sphere coordinates have unit norm.
class Point {
 public:
  Point() = default;

  const Vector& coords() const { return coords_; }
  double operator[](Eigen::Index i) const { return coords_(i); }
  Eigen::Index size() const { return coords_.size(); }

  friend bool operator==(const Point& a, const Point& b) { return a.coords_ == b.coords_; }

  /// Validates and normalizes raw coordinates (torus reduction, sphere check).
  static Point on(const ManifoldSpec& m, const Vector& raw) {
    require(raw.size() == m.ambient_dim(), ErrorCode::InvalidPoint,
            "point has " + std::to_string(raw.size()) + " coordinates, " + to_string(m) + " needs " +
                std::to_string(m.ambient_dim()));
    require(raw.allFinite(), ErrorCode::InvalidPoint, "point has non-finite coordinates");
    Point p;
    if (m.is_torus()) {
      p.coords_ = raw;
      for (Eigen::Index i = 0; i < raw.size(); ++i) p.coords_(i) = reduce_unit(raw(i));
    } else {
      require(std::abs(raw.norm() - 1.0) <= 1e-12, ErrorCode::InvalidPoint, "sphere point is not unit norm");
      p.coords_ = raw;
    }
    return p;
  }

  /// Sphere points produced by integration drift slightly off the sphere.
  static Point projected(const ManifoldSpec& m, const Vector& raw) {
    if (m.is_sphere()) {
      require(raw.allFinite() && raw.norm() > 0.5, ErrorCode::InvalidPoint, "cannot project point to sphere");
      return on(m, raw / raw.norm());
    }
    return on(m, raw);
  }

  static double reduce_unit(double v) {
    double r = v - std::floor(v);
    if (r >= 1.0) r = 0.0;
    return r;
  }

 private:
  Vector coords_;
};

/// Orthonormal basis of T_xM, stored as ambient column vectors.
struct TangentFrame {
  Point base;
  Matrix basis;  // ambient_dim x dim
};

inline void validate_point(const ManifoldSpec& m, const Point& x) {
  require(x.size() == m.ambient_dim(), ErrorCode::InvalidPoint, "point dimension mismatch for " + to_string(m));
  if (m.is_torus()) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      require(x[i] >= 0.0 && x[i] < 1.0, ErrorCode::InvalidPoint, "torus coordinate outside [0,1)");
  } else {
    require(std::abs(x.coords().norm() - 1.0) <= 1e-12, ErrorCode::InvalidPoint, "sphere point is not unit norm");
  }
}

/// Frame basis only. Torus: the standard basis. Sphere: Gram-Schmidt on the
/// standard basis with the axis most aligned to x dropped (lowest index wins
/// ties), which keeps the seed vectors well conditioned near every pole.
inline Matrix frame_basis(const ManifoldSpec& m, const Point& x) {
  if (m.is_torus()) return Matrix::Identity(m.dim, m.dim);
  const Eigen::Index n = m.ambient_dim();
  const Vector& p = x.coords();
  Eigen::Index dropped = 0;
  p.cwiseAbs().maxCoeff(&dropped);
  Matrix basis(n, m.dim);
  Eigen::Index col = 0;
  for (Eigen::Index axis = 0; axis < n; ++axis) {
    if (axis == dropped) continue;
    Vector v = Vector::Unit(n, axis);
    v -= p * p(axis);
    for (Eigen::Index prev = 0; prev < col; ++prev) v -= basis.col(prev) * basis.col(prev).dot(v);
    // Second pass of classical Gram-Schmidt for orthogonality at machine precision.
    v -= p * p.dot(v);
    for (Eigen::Index prev = 0; prev < col; ++prev) v -= basis.col(prev) * basis.col(prev).dot(v);
    basis.col(col++) = v / v.norm();
  }
  return basis;
}

inline TangentFrame tangent_frame(const ManifoldSpec& m, const Point& x) {
  validate_point(m, x);
  return TangentFrame{x, frame_basis(m, x)};
}

/// Minimal-representative displacement y - x on the torus (each coordinate in [-1/2, 1/2]).
inline Vector torus_displacement(const Point& x, const Point& y) {
  Vector delta = y.coords() - x.coords();
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta(i) -= std::round(delta(i));
  return delta;
}

inline double distance(const ManifoldSpec& m, const Point& x, const Point& y) {
  validate_point(m, x);
  validate_point(m, y);
  if (m.is_torus()) return torus_displacement(x, y).norm();
  // Half-angle form: exact zero on the diagonal, accurate near antipodes.
  return 2.0 * std::atan2((x.coords() - y.coords()).norm(), (x.coords() + y.coords()).norm());
}

/// Deterministic point sets used by grids and probes.
namespace points {

/// Torus lattice with `resolution` points per axis at i/resolution.
inline std::vector<Point> torus_lattice(const ManifoldSpec& m, int resolution) {
  require(m.is_torus() && resolution >= 1, ErrorCode::InvalidSpec, "torus lattice needs a torus and resolution >= 1");
  std::vector<Point> out;
  std::vector<int> idx(m.dim, 0);
  for (;;) {
    Vector c(m.dim);
    for (int i = 0; i < m.dim; ++i) c(i) = static_cast<double>(idx[i]) / resolution;
    out.push_back(Point::on(m, c));
    int axis = 0;
    while (axis < m.dim && ++idx[axis] == resolution) idx[axis++] = 0;
    if (axis == m.dim) break;
  }
  return out;
}

/// Fibonacci lattice on S^2, or seeded Gaussian-normalized points on S^d, d != 2.
inline std::vector<Point> sphere_points(const ManifoldSpec& m, int count, std::uint64_t seed) {
  require(m.is_sphere() && count >= 1, ErrorCode::InvalidSpec, "sphere point set needs a sphere and count >= 1");
  std::vector<Point> out;
  out.reserve(count);
  if (m.dim == 2) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      Vector c(3);
      c << r * std::cos(phi), r * std::sin(phi), z;
      out.push_back(Point::on(m, c / c.norm()));
    }
    return out;
  }
  for (int i = 0; i < count; ++i) {
    RandomStream rng(seed, static_cast<std::uint64_t>(i));
    Vector c(m.ambient_dim());
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = rng.normal();
    out.push_back(Point::on(m, c / c.norm()));
  }
  return out;
}

/// `resolution` per axis on the torus, resolution^dim points on the sphere.
inline std::vector<Point> grid(const ManifoldSpec& m, int resolution, std::uint64_t seed = 0) {
  if (m.is_torus()) return torus_lattice(m, resolution);
  int count = 1;
  for (int i = 0; i < m.dim; ++i) count *= resolution;
  return sphere_points(m, count, seed);
}

inline Point random_point(const ManifoldSpec& m, RandomStream& rng) {
  Vector c(m.ambient_dim());
  if (m.is_torus()) {
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = rng.uniform();
    return Point::on(m, c);
  }
  for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = rng.normal();
  return Point::on(m, c / c.norm());
}

}  // namespace points
}  // namespace ifscert
