#pragma once

// Perturbation machinery: bases of divergence-free fields whose lifts span
// the tangent space of Gr(M, l), families f_i(B, .) = Psi(V^(i)(B, .), 1) f_i,
// the map Phi(B) = (G(f_i(B, .))(x, E))_i and its Jacobian, and a seeded
// search for small B making a family eta-nontransverse.

#include "ifscert/certify.hpp"
#include "ifscert/error.hpp"
#include "ifscert/fields.hpp"
#include "ifscert/grassmann.hpp"
#include "ifscert/grid.hpp"
#include "ifscert/maps.hpp"
#include "ifscert/parallel.hpp"
#include "ifscert/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace ifscert {

inline constexpr double kKappaMin = 1e-6;

struct FieldBasis {
  ManifoldSpec manifold;
  std::vector<BasisField> fields;
  int ell = 1;
  /// Minimum over the certification grid of the best lifted minor.
  double kappa = 0.0;
  std::optional<Subspace> worst;
  std::size_t grid_size = 0;

  /// d_l = d + l (d - l), the dimension of Gr(M, l).
  int lifted_dim() const { return manifold.dim + ell * (manifold.dim - ell); }

  VectorFieldSpec field(std::size_t alpha, double coefficient = 1.0) const {
    return VectorFieldSpec{manifold, {{fields[alpha], coefficient}}};
  }
};

/// Torus: constant fields plus sin/cos shears in every ordered axis pair.
/// Sphere: rotation generators, and on S^2 also the Hamiltonian fields of x_a x_b.
inline std::vector<BasisField> default_basis_fields(const ManifoldSpec& m) {
  std::vector<BasisField> out;
  const int n = m.ambient_dim();
  if (m.is_torus()) {
    for (int j = 0; j < n; ++j) out.push_back(ConstantField{j});
    for (bool cosine : {false, true})
      for (int v = 0; v < n; ++v)
        for (int c = 0; c < n; ++c)
          if (c != v) out.push_back(ShearField{c, v, 1, cosine});
    // T^2 order: (1,0), (0,1), (sin 2pi x2, 0), (0, sin 2pi x1), cos variants
    if (n == 2) std::swap(out[2], out[3]), std::swap(out[4], out[5]);
  } else {
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) out.push_back(RotationField{a, b});
    if (m.dim == 2)
      for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) out.push_back(HamiltonianField{a, b});
  }
  return out;
}

namespace detail {

/// Column alpha: (V_alpha(x), vec P_{E^perp} DV_alpha(x)|_E) in frame and graph coordinates.
inline Matrix lifted_columns(const FieldBasis& basis, const Subspace& s) {
  const int d = basis.manifold.dim, l = s.dim();
  const Matrix perp = s.complement();
  Matrix out(d + l * (d - l), static_cast<Eigen::Index>(basis.fields.size()));
  for (std::size_t a = 0; a < basis.fields.size(); ++a) {
    const FieldLift lift = lift_vector_field(basis.field(a), s);
    out.col(static_cast<Eigen::Index>(a)).head(d) = lift.velocity;
    out.col(static_cast<Eigen::Index>(a)).tail(l * (d - l)) = lift.phi_graph.reshaped();
  }
  return out;
}

struct BestMinor {
  double det = 0.0;
  std::vector<int> columns;
};

/// Largest |det| over k-column subsets. Exhaustive up to 5000 subsets, beyond
/// that greedy column pivoting (a lower bound on the true maximum).
inline BestMinor best_minor(const Matrix& a, int k) {
  const int n = static_cast<int>(a.cols());
  BestMinor best;
  if (n < k || a.rows() != k) return best;
  double subsets = 1.0;
  for (int i = 0; i < k; ++i) subsets = subsets * (n - i) / (i + 1);
  if (subsets <= 5000.0) {
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    Matrix sub(k, k);
    for (;;) {
      for (int i = 0; i < k; ++i) sub.col(i) = a.col(idx[static_cast<std::size_t>(i)]);
      const double det = std::abs(sub.determinant());
      if (det > best.det || best.columns.empty()) best = {det, idx};
      int i = k - 1;
      while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
      if (i < 0) break;
      ++idx[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
    return best;
  }
  const Eigen::ColPivHouseholderQR<Matrix> qr(a);
  Matrix sub(k, k);
  for (int i = 0; i < k; ++i) {
    best.columns.push_back(qr.colsPermutation().indices()(i));
    sub.col(i) = a.col(best.columns.back());
  }
  best.det = std::abs(sub.determinant());
  return best;
}

}  // namespace detail

/// Certifies the lifted determinant condition on the grid (points x subspaces).
inline FieldBasis build_field_basis(const ManifoldSpec& m, int ell, const std::vector<BasisField>& fields,
                                   const GridSpec& grid, const Exec& exec = {}, double kappa_min = kKappaMin) {
  require(m.dim >= 2, ErrorCode::InvalidSpec, "field bases need d >= 2");
  require(ell >= 1 && ell <= m.dim - 1, ErrorCode::InvalidSpec, "l must lie in [1, d-1]");
  require(!fields.empty(), ErrorCode::InvalidSpec, "field basis is empty");
  for (const auto& f : fields) validate_basis_field(m, f);
  FieldBasis basis{m, fields, ell, 0.0, std::nullopt, 0};
  const int dl = basis.lifted_dim();
  const auto pts = grid_points(m, grid, false);
  const auto bases = subspace_bases(m.dim, ell, grid);
  basis.grid_size = pts.size() * bases.size();

  std::vector<double> point_min(pts.size());
  std::vector<std::size_t> point_arg(pts.size());
  parallel_for(pts.size(), exec, [&](std::size_t p) {
    double lo = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t b = 0; b < bases.size(); ++b) {
      const Subspace s = Subspace::make(m, pts[p], bases[b]);
      const double det = detail::best_minor(detail::lifted_columns(basis, s), dl).det;
      if (det < lo) lo = det, arg = b;
    }
    point_min[p] = lo;
    point_arg[p] = arg;
  });
  std::size_t worst = 0;
  for (std::size_t p = 1; p < pts.size(); ++p)
    if (point_min[p] < point_min[worst]) worst = p;
  basis.kappa = point_min[worst];
  basis.worst = Subspace::make(m, pts[worst], bases[point_arg[worst]]);
  require(basis.kappa > kappa_min, ErrorCode::BasisDeficient,
          "lifted field determinant " + std::to_string(basis.kappa) + " <= " + std::to_string(kappa_min) +
              "; enlarge the basis");
  return basis;
}

inline FieldBasis build_field_basis(const ManifoldSpec& m, int ell, const GridSpec& grid, const Exec& exec = {}) {
  return build_field_basis(m, ell, default_basis_fields(m), grid, exec);
}

// ---------------------------------------------------------------------------
// Perturbed families

struct PerturbationParams {
  /// L x |A|; row i holds the coefficients of V^(i).
  Matrix b;
  double epsilon = 0.0;
};

/// Max-entry norm, the ball the search samples from.
inline double perturbation_norm(const Matrix& b) { return b.size() == 0 ? 0.0 : b.cwiseAbs().maxCoeff(); }

inline void validate_params(const PerturbationParams& p, std::size_t maps, std::size_t fields) {
  require(p.b.rows() == static_cast<Eigen::Index>(maps) && p.b.cols() == static_cast<Eigen::Index>(fields),
          ErrorCode::InvalidSpec, "B must be L x |A|");
  require(p.b.allFinite() && p.epsilon >= 0.0, ErrorCode::InvalidSpec, "B must be finite and epsilon >= 0");
  require(perturbation_norm(p.b) <= p.epsilon, ErrorCode::InvalidSpec, "|B| exceeds epsilon");
}

inline VectorFieldSpec perturbation_field(const FieldBasis& basis, const Matrix& b, Eigen::Index row) {
  VectorFieldSpec v{basis.manifold, {}};
  for (std::size_t a = 0; a < basis.fields.size(); ++a)
    if (b(row, static_cast<Eigen::Index>(a)) != 0.0)
      v.terms.push_back({basis.fields[a], b(row, static_cast<Eigen::Index>(a))});
  return v;
}

/// f_i(B, .) = time-1 flow of V^(i)(B, .) after f_i. Zero rows leave f_i untouched.
/// `step` is an upper bound, shrunk to the admissible 0.1 / sup proxy.
inline std::vector<Diffeo> perturbed_family(const std::vector<Diffeo>& f_list, const FieldBasis& basis,
                                            const PerturbationParams& params, double step = 1e-2) {
  validate_params(params, f_list.size(), basis.fields.size());
  std::vector<Diffeo> out;
  out.reserve(f_list.size());
  for (std::size_t i = 0; i < f_list.size(); ++i) {
    const VectorFieldSpec v = perturbation_field(basis, params.b, static_cast<Eigen::Index>(i));
    if (v.terms.empty()) {
      out.push_back(f_list[i]);
      continue;
    }
    require(f_list[i].manifold() == basis.manifold, ErrorCode::InvalidSpec, "map and basis live on different manifolds");
    out.push_back(maps::then(f_list[i], maps::flow(v, 1.0, std::min(step, 0.1 / v.sup_proxy()))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phi and its Jacobian

namespace detail {

/// Chart around (y0, F0): base displacement in the frame at y0, then graph
/// coordinates Z = (W^T F)(U^T F)^-1 of F over F0 = span U, W = U^perp.
inline Vector grassmann_chart(const ManifoldSpec& m, const Subspace& center, const Subspace& s) {
  const int d = m.dim, l = center.dim();
  const Matrix f0 = frame_basis(m, center.base);
  Vector out(d + l * (d - l));
  if (m.is_torus())
    out.head(d) = torus_displacement(center.base, s.base);
  else
    out.head(d) = f0.transpose() * (s.base.coords() - center.base.coords());
  // move F into the frame at y0 (torus frames coincide)
  const Matrix f = m.is_torus() ? s.basis : Matrix(f0.transpose() * frame_basis(m, s.base) * s.basis);
  const Matrix& u = center.basis;
  const Matrix w = center.complement();
  const Matrix z = (w.transpose() * f) * (u.transpose() * f).inverse();
  out.tail(l * (d - l)) = z.reshaped();
  return out;
}

}  // namespace detail

struct PhiJacobian {
  /// (L d_l) x (L |A|), central differences in the chart around Phi(B).
  Matrix jacobian;
  /// Analytic lift columns at B = 0 (empty otherwise).
  Matrix analytic;
  double analytic_mismatch = 0.0;
  /// Largest |entry| outside the diagonal blocks.
  double off_block = 0.0;
  /// Product over blocks of the best d_l-minor: the best block-diagonal subset P.
  double best_det = 0.0;
  std::vector<std::vector<int>> subsets;
};

inline PhiJacobian phi_jacobian(const std::vector<Diffeo>& f_list, const FieldBasis& basis, const Subspace& s,
                                const PerturbationParams& params, double h_fd = 1e-4, double step = 1e-2,
                                const Exec& exec = {}) {
  require(h_fd >= 1e-6 && h_fd <= 1e-3, ErrorCode::InvalidSpec, "h_fd must lie in [1e-6, 1e-3]");
  require(!f_list.empty(), ErrorCode::InvalidSpec, "f_list is empty");
  require(s.dim() == basis.ell, ErrorCode::InvalidSpec, "subspace dimension differs from the basis target");
  const ManifoldSpec m = basis.manifold;
  const auto L = static_cast<Eigen::Index>(f_list.size());
  const auto A = static_cast<Eigen::Index>(basis.fields.size());
  const Eigen::Index dl = basis.lifted_dim();

  auto phi = [&](const Matrix& b) {
    const auto maps = perturbed_family(f_list, basis, {b, perturbation_norm(b)}, step);
    std::vector<Subspace> images;
    for (const auto& f : maps) images.push_back(pushforward(f, s));
    return images;
  };
  const auto center = phi(params.b);
  auto coords = [&](const std::vector<Subspace>& images) {
    Vector out(L * dl);
    for (Eigen::Index i = 0; i < L; ++i)
      out.segment(i * dl, dl) = detail::grassmann_chart(m, center[static_cast<std::size_t>(i)],
                                                         images[static_cast<std::size_t>(i)]);
    return out;
  };
  const Vector at_b = coords(center);

  PhiJacobian r;
  r.jacobian = Matrix::Zero(L * dl, L * A);
  std::vector<std::optional<Error>> unstable(static_cast<std::size_t>(L * A));
  parallel_for(static_cast<std::size_t>(L * A), exec, [&](std::size_t c) {
    const Eigen::Index i = static_cast<Eigen::Index>(c) / A, a = static_cast<Eigen::Index>(c) % A;
    Matrix plus = params.b, minus = params.b;
    plus(i, a) += h_fd;
    minus(i, a) -= h_fd;
    const Vector up = coords(phi(plus));
    const Vector central = (up - coords(phi(minus))) / (2.0 * h_fd);
    const Vector forward = (up - at_b) / h_fd;
    r.jacobian.col(static_cast<Eigen::Index>(c)) = central;
    // one-sided and central differences must tell the same story
    if ((central - forward).norm() > 0.1 * central.norm() + 1e-6)
      unstable[c] = Error(ErrorCode::FDInstability, "central and forward differences disagree in column " +
                                                        std::to_string(c));
  });
  for (const auto& e : unstable)
    if (e) throw *e;

  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index k = 0; k < L; ++k)
      if (i != k)
        r.off_block = std::max(r.off_block, r.jacobian.block(i * dl, k * A, dl, A).cwiseAbs().maxCoeff());

  if (perturbation_norm(params.b) == 0.0) {
    r.analytic = Matrix::Zero(L * dl, L * A);
    for (Eigen::Index i = 0; i < L; ++i)
      r.analytic.block(i * dl, i * A, dl, A) = detail::lifted_columns(basis, center[static_cast<std::size_t>(i)]);
    r.analytic_mismatch = (r.analytic - r.jacobian).cwiseAbs().maxCoeff();
  }

  r.best_det = 1.0;
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto best = detail::best_minor(r.jacobian.block(i * dl, i * A, dl, A), static_cast<int>(dl));
    r.best_det *= best.det;
    r.subsets.push_back(best.columns);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Randomized search for a nontransverse perturbation

struct PerturbSearchOptions {
  double eta = 0.05;
  double tau = 0.01;
  double epsilon = 0.1;
  int tries = 1000;
  std::uint64_t seed = 0;
  double step = 1e-2;
  GridSpec grid{};
  Exec exec{};
};

struct PerturbSearchResult {
  bool found = false;
  PerturbationParams params;
  /// Try 0 is B = 0; try t >= 1 draws from RandomStream(seed, t).
  int try_index = -1;
  int tries_used = 0;
  std::uint64_t seed = 0;
  double best_fraction = 0.0;
  int best_try = 0;
  NontransverseReport report;
};

/// Entries uniform in [-epsilon, epsilon]: the max-norm ball.
inline Matrix sample_perturbation(std::size_t maps, std::size_t fields, double epsilon, std::uint64_t seed,
                                  int try_index) {
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(maps), static_cast<Eigen::Index>(fields));
  if (try_index == 0 || epsilon == 0.0) return b;
  RandomStream rng(seed, static_cast<std::uint64_t>(try_index));
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index a = 0; a < b.cols(); ++a) b(i, a) = rng.uniform(-epsilon, epsilon);
  return b;
}

inline PerturbSearchResult search_nontransverse_B(const std::vector<Diffeo>& f_list, const FieldBasis& basis,
                                                  const SubspaceField& e1, const PerturbSearchOptions& o) {
  require(o.tries >= 1, ErrorCode::InvalidSpec, "tries must be >= 1");
  require(o.epsilon >= 0.0, ErrorCode::InvalidSpec, "epsilon must be >= 0");
  PerturbSearchResult r;
  r.seed = o.seed;
  r.best_fraction = -1.0;
  // with epsilon = 0 every draw is B = 0
  const int tries = o.epsilon == 0.0 ? 1 : o.tries;
  for (int t = 0; t < tries; ++t) {
    const PerturbationParams p{sample_perturbation(f_list.size(), basis.fields.size(), o.epsilon, o.seed, t),
                               o.epsilon};
    const auto family = perturbed_family(f_list, basis, p, o.step);
    const auto rep = check_nontransverse(family, e1, o.eta, o.tau, o.grid, o.exec);
    r.tries_used = t + 1;
    if (rep.worst_fraction > r.best_fraction) {
      r.best_fraction = rep.worst_fraction;
      r.best_try = t;
      r.report = rep;
      r.params = p;
    }
    if (rep.pass) {
      r.found = true;
      r.try_index = t;
      return r;
    }
  }
  return r;
}

}  // namespace ifscert
