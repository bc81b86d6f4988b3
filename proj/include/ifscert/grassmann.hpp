#pragma once

// Elements (x, E) of the Grassmannian bundle Gr(M, k), represented by an
// orthonormal basis of E in tangent_frame(x) coordinates. Bases are
// canonicalized by QR with positive diagonal; two subspaces are compared by
// principal angles, never by basis entries.

#include "ifscert/error.hpp"
#include "ifscert/fields.hpp"
#include "ifscert/geometry.hpp"
#include "ifscert/linalg.hpp"
#include "ifscert/maps.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ifscert {

struct Subspace {
  Point base;
  Matrix basis;  // dim x k, orthonormal columns, frame coordinates at base

  int dim() const { return static_cast<int>(basis.cols()); }
  int ambient() const { return static_cast<int>(basis.rows()); }

  /// Orthonormalizes `raw` (columns spanning E) and validates rank.
  static Subspace make(const ManifoldSpec& m, const Point& base, const Matrix& raw) {
    validate_point(m, base);
    require(raw.rows() == m.dim, ErrorCode::InvalidSpec, "subspace basis has wrong number of rows");
    require(raw.cols() >= 1 && raw.cols() <= m.dim - 1, ErrorCode::InvalidSpec,
            "subspace dimension must lie in [1, d-1]");
    const linalg::QrFactors qr = linalg::qr_positive(raw);
    const double scale = std::max(1.0, linalg::max_abs_entry(raw));
    for (Eigen::Index j = 0; j < qr.r.rows(); ++j)
      require(qr.r(j, j) > 1e-12 * scale, ErrorCode::RankCollapse, "subspace basis is rank deficient");
    return Subspace{base, qr.q};
  }

  /// Line at angle theta in the first two frame directions (d = 2 convenience).
  static Subspace line(const ManifoldSpec& m, const Point& base, double theta) {
    Matrix v = Matrix::Zero(m.dim, 1);
    v(0, 0) = std::cos(theta);
    v(1, 0) = std::sin(theta);
    return make(m, base, v);
  }

  Matrix complement() const { return linalg::orthogonal_complement(basis); }
};

/// G(f)(x, E) = (f(x), Df(x) E).
inline Subspace pushforward(const Diffeo& f, const Subspace& s) {
  const ManifoldSpec m = f.manifold();
  require(s.ambient() == m.dim, ErrorCode::InvalidSpec, "subspace does not live on the map's manifold");
  Matrix image = s.basis;
  // Factor-wise pushing with re-orthonormalization keeps long composites stable.
  const Point y = f.for_each_factor(s.base, [&](const Matrix& step) {
    image = step * image;
    const linalg::QrFactors qr = linalg::qr_positive(image);
    for (Eigen::Index j = 0; j < qr.r.rows(); ++j)
      require(qr.r(j, j) > 0.0 && std::isfinite(qr.r(j, j)), ErrorCode::RankCollapse,
              "pushforward lost rank (differential numerically singular)");
    image = qr.q;
  });
  return Subspace::make(m, y, image);
}

namespace detail {

/// Smallest and largest principal angles between span(a) and span(b),
/// computed from cosines for large angles and from sines for small ones.
struct PrincipalAngles {
  double smallest = 0.0;
  double largest = 0.0;
};

inline PrincipalAngles principal_angles(const Matrix& a, const Matrix& b) {
  const Matrix& big = a.cols() >= b.cols() ? a : b;
  const Matrix& small = a.cols() >= b.cols() ? b : a;
  const Vector cosines = linalg::singular_values(big.transpose() * small);
  const Matrix residual = small - big * (big.transpose() * small);
  const Vector sines = linalg::singular_values(residual);
  // sines sorted descending; pair the k smallest angles with the k largest cosines.
  const Eigen::Index k = small.cols();
  auto angle_from = [](double c, double s) { return std::atan2(std::max(0.0, s), std::max(0.0, c)); };
  PrincipalAngles out;
  out.smallest = angle_from(cosines(0), sines(k - 1));
  out.largest = angle_from(cosines(k - 1), sines(0));
  out.smallest = std::clamp(out.smallest, 0.0, std::numbers::pi / 2);
  out.largest = std::clamp(out.largest, 0.0, std::numbers::pi / 2);
  return out;
}

inline void require_same_base(const Subspace& e, const Subspace& f) {
  require(e.base.size() == f.base.size() && (e.base.coords() - f.base.coords()).cwiseAbs().maxCoeff() <= 1e-12,
          ErrorCode::BaseMismatch, "subspaces live at different base points");
}

}  // namespace detail

/// Smallest principal angle, in [0, pi/2]. Zero iff the spans intersect nontrivially.
inline double principal_angle(const Subspace& e, const Subspace& f) {
  detail::require_same_base(e, f);
  return detail::principal_angles(e.basis, f.basis).smallest;
}

/// Largest principal angle: zero iff the spans coincide (equal dimensions).
inline double max_principal_angle(const Subspace& e, const Subspace& f) {
  detail::require_same_base(e, f);
  return detail::principal_angles(e.basis, f.basis).largest;
}

namespace detail {

inline void require_invertible(const Matrix& a) {
  require(a.rows() == a.cols() && a.allFinite(), ErrorCode::SingularMatrix, "matrix must be square and finite");
  const Vector s = linalg::singular_values(a);
  require(s(s.size() - 1) > 1e-14 * s(0), ErrorCode::SingularMatrix, "matrix is numerically singular");
}

}  // namespace detail

/// sup over unit v in E^perp of |P_{(A E)^perp} A v|.
inline double transverse_growth(const Matrix& a, const Matrix& e_basis) {
  detail::require_invertible(a);
  const Matrix e_perp = linalg::orthogonal_complement(e_basis);
  const linalg::QrFactors image = linalg::qr_positive(a * e_basis);
  const Matrix image_perp = linalg::orthogonal_complement(image.q);
  return linalg::op_norm(image_perp.transpose() * a * e_perp);
}

inline double transverse_growth(const Matrix& a, const Subspace& e) { return transverse_growth(a, e.basis); }

/// inf over unit u in E of |A u|.
inline double tangential_contraction(const Matrix& a, const Matrix& e_basis) {
  detail::require_invertible(a);
  return linalg::min_singular_value(a * e_basis);
}

inline double tangential_contraction(const Matrix& a, const Subspace& e) {
  return tangential_contraction(a, e.basis);
}

/// Lift of a vector field to Gr(M, k) at (x, E): the base velocity V(x) and
/// the fiber velocity phi = P_{E^perp} DV(x, .)|_E, both in frame coordinates.
struct FieldLift {
  Vector velocity;   // dim
  Matrix phi;        // dim x k: P_{E^perp} DV E_basis
  /// phi in (E^perp basis, E basis) coordinates: (d-k) x k.
  Matrix phi_graph;
};

inline FieldLift lift_vector_field(const VectorFieldSpec& v, const Subspace& s) {
  require(v.manifold.dim == s.ambient(), ErrorCode::InvalidSpec, "field and subspace live on different manifolds");
  const Matrix dv = v.frame_jacobian(s.base);
  const Matrix perp = s.complement();
  FieldLift out;
  out.velocity = v.frame_value(s.base);
  out.phi_graph = perp.transpose() * dv * s.basis;
  out.phi = perp * out.phi_graph;
  return out;
}

}  // namespace ifscert
