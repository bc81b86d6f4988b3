#pragma once

// Volume-preserving diffeomorphisms of T^d and S^d.
//
// Differentials are d x d matrices taking tangent_frame(x) coordinates to
// tangent_frame(f(x)) coordinates. Composite maps additionally expose their
// factors one by one (for_each_factor) so that long products can be
// accumulated with QR re-orthonormalization instead of being multiplied out.

#include "ifscert/error.hpp"
#include "ifscert/fields.hpp"
#include "ifscert/geometry.hpp"
#include "ifscert/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace ifscert {

/// x -> A x mod 1 with A an integer matrix of determinant +-1.
struct LinearToral {
  Eigen::MatrixXi matrix;
  friend bool operator==(const LinearToral&, const LinearToral&) = default;
};

/// x -> A x + b mod 1 with real A, |det A| = 1. Genuine toral diffeomorphisms
/// need integer A; real A (e.g. small shears) act on the fundamental domain
/// representative and are smooth away from its boundary.
struct ToralAffine {
  Matrix matrix;
  Vector offset;
  friend bool operator==(const ToralAffine& a, const ToralAffine& b) {
    return a.matrix == b.matrix && a.offset == b.offset;
  }
};

/// x -> R x on S^d with R in SO(d+1).
struct SphereRotation {
  Matrix matrix;
  friend bool operator==(const SphereRotation& a, const SphereRotation& b) { return a.matrix == b.matrix; }
};

/// Time-`time` map of a divergence-free field, classical RK4 with
/// N = ceil(|time| / step) equal substeps.
struct FlowMap {
  VectorFieldSpec field;
  double time = 1.0;
  double step = 1e-2;
  friend bool operator==(const FlowMap&, const FlowMap&) = default;
};

class Diffeo;

/// maps[0] first, then maps[1], ...; the whole sequence is applied `repeat` times.
struct Composite {
  std::vector<Diffeo> maps;
  int repeat = 1;
  friend bool operator==(const Composite&, const Composite&);
};

class Diffeo {
 public:
  using Variant = std::variant<LinearToral, ToralAffine, SphereRotation, FlowMap, Composite>;

  Diffeo(LinearToral v) : impl_(std::move(v)) { validate(); }
  Diffeo(ToralAffine v) : impl_(std::move(v)) { validate(); }
  Diffeo(SphereRotation v) : impl_(std::move(v)) { validate(); }
  Diffeo(FlowMap v) : impl_(std::move(v)) { validate(); }
  Diffeo(Composite v) : impl_(std::move(v)) { validate(); }

  const Variant& variant() const { return impl_; }

  template <class T>
  const T* as() const {
    return std::get_if<T>(&impl_);
  }

  ManifoldSpec manifold() const;

  /// Differential is independent of x (linear toral, affine, rotations and composites of these).
  bool has_constant_differential() const;

  /// Kernels of the Grassmannian cocycle are x-independent (toral linear/affine only).
  bool is_linear_toral() const;

  Point apply(const Point& x) const;
  Matrix differential(const Point& x) const;
  Diffeo inverse() const;

  /// Applies f to x and reports each elementary factor's frame differential
  /// in application order. Returns f(x).
  Point for_each_factor(const Point& x, const std::function<void(const Matrix&)>& sink) const;

  friend bool operator==(const Diffeo& a, const Diffeo& b) { return a.impl_ == b.impl_; }

 private:
  void validate() const;
  Variant impl_;
};

inline bool operator==(const Composite& a, const Composite& b) { return a.repeat == b.repeat && a.maps == b.maps; }

// ---------------------------------------------------------------------------
// construction helpers

namespace maps {

inline Diffeo linear_toral(std::initializer_list<std::initializer_list<int>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXi m(n, n);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (int v : row) m(i, j++) = v;
    ++i;
  }
  return Diffeo(LinearToral{m});
}

inline Diffeo cat_map() { return linear_toral({{2, 1}, {1, 1}}); }

inline Diffeo identity_torus(int d) { return Diffeo(LinearToral{Eigen::MatrixXi::Identity(d, d)}); }

/// [[1, s], [0, 1]] on T^2.
inline Diffeo shear(double s) {
  Matrix m(2, 2);
  m << 1.0, s, 0.0, 1.0;
  return Diffeo(ToralAffine{m, Vector::Zero(2)});
}

inline Diffeo translation(const Vector& offset) {
  return Diffeo(ToralAffine{Matrix::Identity(offset.size(), offset.size()), offset});
}

inline Diffeo rotation(const Matrix& r) { return Diffeo(SphereRotation{r}); }

inline Diffeo flow(VectorFieldSpec field, double time, double step) {
  return Diffeo(FlowMap{std::move(field), time, step});
}

/// Applies `first`, then `second`.
inline Diffeo then(const Diffeo& first, const Diffeo& second) { return Diffeo(Composite{{first, second}, 1}); }

inline Diffeo power(const Diffeo& f, int k) { return Diffeo(Composite{{f}, k}); }

}  // namespace maps

// ---------------------------------------------------------------------------
// implementation

namespace detail {

inline long long integer_det(const Eigen::MatrixXi& m) {
  // Bareiss fraction-free elimination; exact for the small matrices used here.
  const Eigen::Index n = m.rows();
  std::vector<std::vector<__int128>> a(n, std::vector<__int128>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a[i][j] = m(i, j);
  __int128 prev = 1;
  int sign = 1;
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    if (a[k][k] == 0) {
      Eigen::Index swap = k + 1;
      while (swap < n && a[swap][k] == 0) ++swap;
      if (swap == n) return 0;
      std::swap(a[k], a[swap]);
      sign = -sign;
    }
    for (Eigen::Index i = k + 1; i < n; ++i)
      for (Eigen::Index j = k + 1; j < n; ++j) a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
    prev = a[k][k];
  }
  return static_cast<long long>(sign * a[n - 1][n - 1]);
}

struct FlowResult {
  Vector end;         // ambient coordinates, not reduced
  Matrix variation;   // ambient derivative of the time-t map
};

inline int flow_substeps(const FlowMap& f) {
  if (f.time == 0.0) return 0;
  return static_cast<int>(std::ceil(std::abs(f.time) / f.step - 1e-9));
}

inline FlowResult integrate_flow(const FlowMap& f, const Vector& start, bool with_variation) {
  const int n = f.field.manifold.ambient_dim();
  const int steps = flow_substeps(f);
  FlowResult r{start, Matrix::Identity(n, n)};
  if (steps == 0 || f.field.is_zero()) return r;
  const double h = f.time / steps;
  Vector k1(n), k2(n), k3(n), k4(n), y2(n), y3(n), y4(n);
  Matrix j1(n, n), j2(n, n), j3(n, n), j4(n, n), l1(n, n), l2(n, n), l3(n, n), l4(n, n);
  Matrix* jac[4] = {nullptr, nullptr, nullptr, nullptr};
  if (with_variation) jac[0] = &j1, jac[1] = &j2, jac[2] = &j3, jac[3] = &j4;
  for (int s = 0; s < steps; ++s) {
    const Vector& y = r.end;
    f.field.evaluate(y, k1, jac[0]);
    y2.noalias() = y + 0.5 * h * k1;
    f.field.evaluate(y2, k2, jac[1]);
    y3.noalias() = y + 0.5 * h * k2;
    f.field.evaluate(y3, k3, jac[2]);
    y4.noalias() = y + h * k3;
    f.field.evaluate(y4, k4, jac[3]);
    if (with_variation) {
      const Matrix& p = r.variation;
      l1.noalias() = j1 * p;
      l2.noalias() = j2 * (p + 0.5 * h * l1);
      l3.noalias() = j3 * (p + 0.5 * h * l2);
      l4.noalias() = j4 * (p + h * l3);
      r.variation += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
    r.end += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return r;
}

}  // namespace detail

inline ManifoldSpec Diffeo::manifold() const {
  return std::visit(
      [](const auto& f) -> ManifoldSpec {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearToral>) {
          return ManifoldSpec::torus(static_cast<int>(f.matrix.rows()));
        } else if constexpr (std::is_same_v<T, ToralAffine>) {
          return ManifoldSpec::torus(static_cast<int>(f.matrix.rows()));
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          return ManifoldSpec::sphere(static_cast<int>(f.matrix.rows()) - 1);
        } else if constexpr (std::is_same_v<T, FlowMap>) {
          return f.field.manifold;
        } else {
          return f.maps.front().manifold();
        }
      },
      impl_);
}

inline void Diffeo::validate() const {
  std::visit(
      [](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearToral>) {
          require(f.matrix.rows() >= 1 && f.matrix.rows() == f.matrix.cols(), ErrorCode::InvalidSpec,
                  "linear toral map needs a square matrix");
          const long long det = detail::integer_det(f.matrix);
          require(det == 1 || det == -1, ErrorCode::InvalidSpec,
                  "linear toral map needs det +-1, got " + std::to_string(det));
        } else if constexpr (std::is_same_v<T, ToralAffine>) {
          require(f.matrix.rows() >= 1 && f.matrix.rows() == f.matrix.cols() && f.offset.size() == f.matrix.rows(),
                  ErrorCode::InvalidSpec, "affine toral map needs a square matrix and matching offset");
          require(f.matrix.allFinite() && f.offset.allFinite(), ErrorCode::InvalidSpec, "non-finite affine map");
          require(std::abs(std::abs(f.matrix.determinant()) - 1.0) <= 1e-12, ErrorCode::InvalidSpec,
                  "affine toral map needs |det| = 1");
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          const auto n = f.matrix.rows();
          require(n >= 2 && n == f.matrix.cols(), ErrorCode::InvalidSpec, "rotation needs a square matrix, size >= 2");
          require(linalg::max_abs_entry(f.matrix.transpose() * f.matrix - Matrix::Identity(n, n)) <= 1e-12,
                  ErrorCode::InvalidSpec, "rotation matrix is not orthogonal");
          require(f.matrix.determinant() > 0.0, ErrorCode::InvalidSpec, "rotation matrix has det -1");
        } else if constexpr (std::is_same_v<T, FlowMap>) {
          f.field.validate();
          require(std::isfinite(f.time) && f.step > 0.0 && std::isfinite(f.step), ErrorCode::InvalidSpec,
                  "flow map needs finite time and positive step");
          const double proxy = f.field.sup_proxy();
          require(proxy == 0.0 || f.step <= 0.1 / proxy, ErrorCode::StepTooLarge,
                  "step " + std::to_string(f.step) + " exceeds 0.1 / sup proxy = " + std::to_string(0.1 / proxy));
        } else {
          require(!f.maps.empty() && f.repeat >= 0, ErrorCode::InvalidSpec, "composite needs maps and repeat >= 0");
          const ManifoldSpec m = f.maps.front().manifold();
          for (const auto& g : f.maps)
            require(g.manifold() == m, ErrorCode::InvalidSpec, "composite maps live on different manifolds");
        }
      },
      impl_);
}

inline bool Diffeo::has_constant_differential() const {
  return std::visit(
      [](const auto& f) -> bool {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, FlowMap>) {
          return f.field.is_zero() || f.time == 0.0;
        } else if constexpr (std::is_same_v<T, Composite>) {
          for (const auto& g : f.maps)
            if (!g.has_constant_differential()) return false;
          return true;
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          return false;  // constant ambient matrix, but frames rotate with x
        } else {
          return true;
        }
      },
      impl_);
}

inline bool Diffeo::is_linear_toral() const {
  return manifold().is_torus() && has_constant_differential();
}

inline Point Diffeo::apply(const Point& x) const {
  const ManifoldSpec m = manifold();
  validate_point(m, x);
  return std::visit(
      [&](const auto& f) -> Point {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearToral>) {
          // Row-wise reduction keeps each product small before summing.
          Vector y(x.size());
          for (Eigen::Index i = 0; i < y.size(); ++i) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < y.size(); ++j)
              acc = Point::reduce_unit(acc + Point::reduce_unit(f.matrix(i, j) * x[j]));
            y(i) = acc;
          }
          return Point::on(m, y);
        } else if constexpr (std::is_same_v<T, ToralAffine>) {
          return Point::on(m, f.matrix * x.coords() + f.offset);
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          return Point::projected(m, f.matrix * x.coords());
        } else if constexpr (std::is_same_v<T, FlowMap>) {
          return Point::projected(m, detail::integrate_flow(f, x.coords(), false).end);
        } else {
          Point y = x;
          for (int r = 0; r < f.repeat; ++r)
            for (const auto& g : f.maps) y = g.apply(y);
          return y;
        }
      },
      impl_);
}

inline Point Diffeo::for_each_factor(const Point& x, const std::function<void(const Matrix&)>& sink) const {
  if (const auto* c = as<Composite>()) {
    Point y = x;
    for (int r = 0; r < c->repeat; ++r)
      for (const auto& g : c->maps) y = g.for_each_factor(y, sink);
    if (c->repeat == 0) sink(Matrix::Identity(manifold().dim, manifold().dim));
    return y;
  }
  const ManifoldSpec m = manifold();
  validate_point(m, x);
  if (const auto* fl = as<FlowMap>()) {
    const detail::FlowResult r = detail::integrate_flow(*fl, x.coords(), true);
    const Point y = Point::projected(m, r.end);
    sink(frame_basis(m, y).transpose() * r.variation * frame_basis(m, x));
    return y;
  }
  const Point y = apply(x);
  sink(differential(x));
  return y;
}

inline Matrix Diffeo::differential(const Point& x) const {
  const ManifoldSpec m = manifold();
  validate_point(m, x);
  return std::visit(
      [&](const auto& f) -> Matrix {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearToral>) {
          return f.matrix.template cast<double>();
        } else if constexpr (std::is_same_v<T, ToralAffine>) {
          return f.matrix;
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          const Point y = Point::projected(m, f.matrix * x.coords());
          return frame_basis(m, y).transpose() * f.matrix * frame_basis(m, x);
        } else if constexpr (std::is_same_v<T, FlowMap>) {
          const detail::FlowResult r = detail::integrate_flow(f, x.coords(), true);
          const Point y = Point::projected(m, r.end);
          return frame_basis(m, y).transpose() * r.variation * frame_basis(m, x);
        } else {
          Matrix total = Matrix::Identity(m.dim, m.dim);
          Point y = x;
          for (int r = 0; r < f.repeat; ++r)
            for (const auto& g : f.maps) {
              total = g.differential(y) * total;
              y = g.apply(y);
            }
          return total;
        }
      },
      impl_);
}

inline Diffeo Diffeo::inverse() const {
  return std::visit(
      [](const auto& f) -> Diffeo {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearToral>) {
          const Matrix inv = f.matrix.template cast<double>().inverse();
          return Diffeo(LinearToral{inv.array().round().template cast<int>().matrix()});
        } else if constexpr (std::is_same_v<T, ToralAffine>) {
          const Matrix inv = f.matrix.inverse();
          return Diffeo(ToralAffine{inv, -(inv * f.offset)});
        } else if constexpr (std::is_same_v<T, SphereRotation>) {
          return Diffeo(SphereRotation{f.matrix.transpose()});
        } else if constexpr (std::is_same_v<T, FlowMap>) {
          return Diffeo(FlowMap{f.field, -f.time, f.step});
        } else {
          Composite inv;
          inv.repeat = f.repeat;
          for (auto it = f.maps.rbegin(); it != f.maps.rend(); ++it) inv.maps.push_back(it->inverse());
          return Diffeo(std::move(inv));
        }
      },
      impl_);
}

// ---------------------------------------------------------------------------

/// Grid estimate of max(|Df|_op, |Df^-1|_op). For maps with constant
/// differential the value is exact and `inflated == grid_value`; otherwise
/// inflated = grid_value * (1 + c * spacing), c = Lipschitz proxy of the
/// underlying fields times the flow time.
struct C1Bound {
  double grid_value = 0.0;
  double inflated = 0.0;
  bool exact = false;
  int grid_size = 0;
};

namespace detail {

inline double lipschitz_scale(const Diffeo& f) {
  return std::visit(
      [](const auto& g) -> double {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, FlowMap>) {
          return g.field.lipschitz_proxy() * std::abs(g.time);
        } else if constexpr (std::is_same_v<T, Composite>) {
          double s = 0.0;
          for (const auto& h : g.maps) s += lipschitz_scale(h);
          return s * g.repeat;
        } else {
          return 0.0;
        }
      },
      f.variant());
}

}  // namespace detail

inline C1Bound c1_norm_bound(const Diffeo& f, int grid_size) {
  require(grid_size >= 2, ErrorCode::InvalidSpec, "c1_norm_bound needs grid_size >= 2");
  const ManifoldSpec m = f.manifold();
  C1Bound out;
  out.grid_size = grid_size;
  if (f.as<SphereRotation>()) {
    out.grid_value = out.inflated = 1.0;
    out.exact = true;
    return out;
  }
  const Diffeo inv = f.inverse();
  if (f.has_constant_differential()) {
    const Point x = m.is_torus() ? Point::on(m, Vector::Zero(m.dim)) : points::sphere_points(m, 1, 0).front();
    out.grid_value = std::max(linalg::op_norm(f.differential(x)), linalg::op_norm(inv.differential(x)));
    out.inflated = out.grid_value;
    out.exact = true;
    return out;
  }
  for (const Point& x : points::grid(m, grid_size)) {
    out.grid_value = std::max(out.grid_value, linalg::op_norm(f.differential(x)));
    out.grid_value = std::max(out.grid_value, linalg::op_norm(inv.differential(x)));
  }
  const double spacing = m.is_torus() ? std::sqrt(static_cast<double>(m.dim)) / grid_size
                                      : std::numbers::pi / grid_size;
  out.inflated = out.grid_value * (1.0 + detail::lipschitz_scale(f) * spacing);
  return out;
}

}  // namespace ifscert
