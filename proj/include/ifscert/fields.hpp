#pragma once

// Divergence-free vector fields built from a small catalogue of basis
// fields. Every basis field is divergence-free by construction:
//   torus  - constant fields e_j and shear fields trig(2 pi k x_v) e_c, c != v;
//   sphere - rotation generators x -> (e_a e_b^T - e_b e_a^T) x, and on S^2
//            Hamiltonian fields x -> x cross grad(x_a x_b).
// Fields are evaluated in ambient coordinates; ambient_jacobian is the
// derivative of the natural ambient extension, whose tangential projection
// is the Levi-Civita derivative on the sphere.

#include "ifscert/error.hpp"
#include "ifscert/geometry.hpp"
#include "ifscert/linalg.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

namespace ifscert {

struct ConstantField {
  int axis = 0;
  friend bool operator==(const ConstantField&, const ConstantField&) = default;
};

/// V(x) = sin(2 pi k x_variable) e_component (or cos), component != variable.
struct ShearField {
  int component = 0;
  int variable = 1;
  int frequency = 1;
  bool cosine = false;
  friend bool operator==(const ShearField&, const ShearField&) = default;
};

/// V(x) = x_b e_a - x_a e_b.
struct RotationField {
  int a = 0;
  int b = 1;
  friend bool operator==(const RotationField&, const RotationField&) = default;
};

/// S^2 only: V(x) = x cross S x with S = e_a e_b^T + e_b e_a^T (gradient of x_a x_b).
struct HamiltonianField {
  int a = 0;
  int b = 1;
  friend bool operator==(const HamiltonianField&, const HamiltonianField&) = default;
};

using BasisField = std::variant<ConstantField, ShearField, RotationField, HamiltonianField>;

namespace detail {

inline Matrix cross_matrix(const Vector& w) {
  Matrix c(3, 3);
  c << 0.0, -w(2), w(1), w(2), 0.0, -w(0), -w(1), w(0), 0.0;
  return c;
}

inline Matrix hamiltonian_s(int a, int b) {
  Matrix s = Matrix::Zero(3, 3);
  s(a, b) += 1.0;
  s(b, a) += 1.0;
  return s;
}

}  // namespace detail

inline void validate_basis_field(const ManifoldSpec& m, const BasisField& field) {
  const int n = m.ambient_dim();
  auto in_range = [n](int i) { return i >= 0 && i < n; };
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          require(m.is_torus() && in_range(f.axis), ErrorCode::InvalidSpec, "constant field needs a torus axis");
        } else if constexpr (std::is_same_v<T, ShearField>) {
          require(m.is_torus() && in_range(f.component) && in_range(f.variable) && f.component != f.variable &&
                      f.frequency >= 1,
                  ErrorCode::InvalidSpec, "shear field needs distinct torus axes and frequency >= 1");
        } else if constexpr (std::is_same_v<T, RotationField>) {
          require(m.is_sphere() && in_range(f.a) && in_range(f.b) && f.a != f.b, ErrorCode::InvalidSpec,
                  "rotation field needs distinct ambient axes on a sphere");
        } else {
          require(m.is_sphere() && m.dim == 2 && in_range(f.a) && in_range(f.b), ErrorCode::InvalidSpec,
                  "hamiltonian fields are defined on S^2 only");
        }
      },
      field);
}

inline Vector basis_value(const ManifoldSpec& m, const BasisField& field, const Vector& x) {
  Vector v = Vector::Zero(m.ambient_dim());
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          v(f.axis) = 1.0;
        } else if constexpr (std::is_same_v<T, ShearField>) {
          const double arg = 2.0 * std::numbers::pi * f.frequency * x(f.variable);
          v(f.component) = f.cosine ? std::cos(arg) : std::sin(arg);
        } else if constexpr (std::is_same_v<T, RotationField>) {
          v(f.a) = x(f.b);
          v(f.b) = -x(f.a);
        } else {
          const Vector sx = detail::hamiltonian_s(f.a, f.b) * x;
          v = x.head<3>().cross(sx.head<3>());
        }
      },
      field);
  return v;
}

inline Matrix basis_jacobian(const ManifoldSpec& m, const BasisField& field, const Vector& x) {
  const int n = m.ambient_dim();
  Matrix j = Matrix::Zero(n, n);
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
        } else if constexpr (std::is_same_v<T, ShearField>) {
          const double w = 2.0 * std::numbers::pi * f.frequency;
          const double arg = w * x(f.variable);
          j(f.component, f.variable) = f.cosine ? -w * std::sin(arg) : w * std::cos(arg);
        } else if constexpr (std::is_same_v<T, RotationField>) {
          j(f.a, f.b) = 1.0;
          j(f.b, f.a) = -1.0;
        } else {
          // d/du [x cross S x] = u cross S x + x cross S u
          const Matrix s = detail::hamiltonian_s(f.a, f.b);
          j = -detail::cross_matrix(s * x) + detail::cross_matrix(x) * s;
        }
      },
      field);
  return j;
}

/// out += c V(x) and, if jac is given, *jac += c DV(x), without temporaries.
inline void accumulate_basis(const ManifoldSpec& m, const BasisField& field, const Vector& x, double c, Vector& out,
                             Matrix* jac) {
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          out(f.axis) += c;
        } else if constexpr (std::is_same_v<T, ShearField>) {
          const double w = 2.0 * std::numbers::pi * f.frequency;
          const double arg = w * x(f.variable);
          const double sn = std::sin(arg), cs = std::cos(arg);
          out(f.component) += c * (f.cosine ? cs : sn);
          if (jac) (*jac)(f.component, f.variable) += c * (f.cosine ? -w * sn : w * cs);
        } else if constexpr (std::is_same_v<T, RotationField>) {
          out(f.a) += c * x(f.b);
          out(f.b) -= c * x(f.a);
          if (jac) (*jac)(f.a, f.b) += c, (*jac)(f.b, f.a) -= c;
        } else {
          out += c * basis_value(m, field, x);
          if (jac) *jac += c * basis_jacobian(m, field, x);
        }
      },
      field);
}

/// Sup of |V| and sup of |DV| over M for a unit-coefficient basis field.
struct FieldBounds {
  double sup = 0.0;
  double lipschitz = 0.0;
};

inline FieldBounds basis_bounds(const BasisField& field) {
  return std::visit(
      [](const auto& f) -> FieldBounds {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          return {1.0, 0.0};
        } else if constexpr (std::is_same_v<T, ShearField>) {
          return {1.0, 2.0 * std::numbers::pi * f.frequency};
        } else if constexpr (std::is_same_v<T, RotationField>) {
          return {1.0, 1.0};
        } else {
          return {2.0, 4.0};
        }
      },
      field);
}

inline std::string describe(const BasisField& field) {
  return std::visit(
      [](const auto& f) -> std::string {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          return "const(e" + std::to_string(f.axis) + ")";
        } else if constexpr (std::is_same_v<T, ShearField>) {
          return std::string(f.cosine ? "cos" : "sin") + "(2pi*" + std::to_string(f.frequency) + "*x" +
                 std::to_string(f.variable) + ")e" + std::to_string(f.component);
        } else if constexpr (std::is_same_v<T, RotationField>) {
          return "rot(" + std::to_string(f.a) + "," + std::to_string(f.b) + ")";
        } else {
          return "ham(" + std::to_string(f.a) + "," + std::to_string(f.b) + ")";
        }
      },
      field);
}

/// A finite linear combination of basis fields on one manifold.
struct VectorFieldSpec {
  struct Term {
    BasisField field;
    double coefficient = 0.0;
    friend bool operator==(const Term&, const Term&) = default;
  };

  ManifoldSpec manifold;
  std::vector<Term> terms;

  friend bool operator==(const VectorFieldSpec&, const VectorFieldSpec&) = default;

  void validate() const {
    for (const auto& t : terms) {
      validate_basis_field(manifold, t.field);
      require(std::isfinite(t.coefficient), ErrorCode::InvalidSpec, "field coefficient must be finite");
    }
  }

  Vector value(const Vector& x) const {
    Vector v = Vector::Zero(manifold.ambient_dim());
    for (const auto& t : terms)
      if (t.coefficient != 0.0) v += t.coefficient * basis_value(manifold, t.field, x);
    return v;
  }

  /// v = V(x) and, if jac is given, *jac = DV(x), reusing the caller's storage.
  void evaluate(const Vector& x, Vector& v, Matrix* jac) const {
    v.setZero(manifold.ambient_dim());
    if (jac) jac->setZero(manifold.ambient_dim(), manifold.ambient_dim());
    for (const auto& t : terms)
      if (t.coefficient != 0.0) accumulate_basis(manifold, t.field, x, t.coefficient, v, jac);
  }

  Matrix ambient_jacobian(const Vector& x) const {
    Matrix j = Matrix::Zero(manifold.ambient_dim(), manifold.ambient_dim());
    for (const auto& t : terms)
      if (t.coefficient != 0.0) j += t.coefficient * basis_jacobian(manifold, t.field, x);
    return j;
  }

  /// V(x) in tangent_frame(x) coordinates.
  Vector frame_value(const Point& x) const { return frame_basis(manifold, x).transpose() * value(x.coords()); }

  /// Covariant derivative DV(x, .) as a dim x dim matrix in tangent_frame(x).
  Matrix frame_jacobian(const Point& x) const {
    const Matrix f = frame_basis(manifold, x);
    return f.transpose() * ambient_jacobian(x.coords()) * f;
  }

  /// Riemannian divergence at x (torus: trace; sphere: trace minus normal-normal term).
  double divergence(const Vector& x) const {
    const Matrix j = ambient_jacobian(x);
    if (manifold.is_torus()) return j.trace();
    return j.trace() - x.dot(j * x);
  }

  /// Sum of |c| * max(sup|V|, sup|DV|): the scale that bounds admissible step sizes.
  double sup_proxy() const {
    double s = 0.0;
    for (const auto& t : terms) {
      const FieldBounds b = basis_bounds(t.field);
      s += std::abs(t.coefficient) * std::max(b.sup, b.lipschitz);
    }
    return s;
  }

  double lipschitz_proxy() const {
    double s = 0.0;
    for (const auto& t : terms) s += std::abs(t.coefficient) * basis_bounds(t.field).lipschitz;
    return s;
  }

  bool is_zero() const {
    for (const auto& t : terms)
      if (t.coefficient != 0.0) return false;
    return true;
  }
};

}  // namespace ifscert
