#include "ifscert/perturb.hpp"

#include "desk.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace ifscert;
using Catch::Approx;

namespace {

const ManifoldSpec t2 = ManifoldSpec::torus(2);
const double two_pi = 2 * std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

GridSpec coarse(int points, int lines) {
  GridSpec g;
  g.point_resolution = points;
  g.subspace_count = lines;
  return g;
}

// Hand-derived lifts of the six T^2 fields at (x, line theta): rows are
// (V_1, V_2, phi) with phi = <E^perp, DV E>, E = (c, s), E^perp = (-s, c).
Matrix t2_lift_oracle(double x1, double x2, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double sin1 = std::sin(two_pi * x1), cos1 = std::cos(two_pi * x1);
  const double sin2 = std::sin(two_pi * x2), cos2 = std::cos(two_pi * x2);
  Matrix m(3, 6);
  // (1,0), (0,1)
  m.col(0) << 1, 0, 0;
  m.col(1) << 0, 1, 0;
  // (sin 2pi x2, 0): DV = [[0, 2pi cos],[0, 0]] -> phi = -s * 2pi cos2 * s
  m.col(2) << sin2, 0, -two_pi * cos2 * s * s;
  // (0, sin 2pi x1): DV = [[0, 0],[2pi cos, 0]] -> phi = c * 2pi cos1 * c
  m.col(3) << 0, sin1, two_pi * cos1 * c * c;
  m.col(4) << cos2, 0, two_pi * sin2 * s * s;
  m.col(5) << 0, cos1, -two_pi * sin1 * c * c;
  return m;
}

// Graph coordinates depend on the orientation chosen for E^perp: the fiber row
// may come out negated as a whole.
double lift_mismatch(const Matrix& got, Matrix want) {
  const double direct = (got - want).cwiseAbs().maxCoeff();
  want.row(2) *= -1;
  return std::min(direct, (got - want).cwiseAbs().maxCoeff());
}

double oracle_best_minor(const Matrix& m) {
  double best = 0;
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b)
      for (int c = b + 1; c < 6; ++c) {
        Matrix s(3, 3);
        s << m.col(a), m.col(b), m.col(c);
        best = std::max(best, std::abs(s.determinant()));
      }
  return best;
}

}  // namespace

TEST_CASE("default bases and divergence", "[perturb]") {
  const auto t = default_basis_fields(t2);
  REQUIRE(t.size() == 6);
  CHECK(t[0] == BasisField{ConstantField{0}});
  CHECK(t[1] == BasisField{ConstantField{1}});
  CHECK(t[2] == BasisField{ShearField{0, 1, 1, false}});
  CHECK(t[3] == BasisField{ShearField{1, 0, 1, false}});
  CHECK(t[4] == BasisField{ShearField{0, 1, 1, true}});
  CHECK(t[5] == BasisField{ShearField{1, 0, 1, true}});

  RandomStream rng(4, 0);
  for (const ManifoldSpec m : {t2, ManifoldSpec::torus(3), ManifoldSpec::sphere(2), ManifoldSpec::sphere(3)})
    for (const auto& f : default_basis_fields(m))
      for (int k = 0; k < 20; ++k) {
        const Point x = points::random_point(m, rng);
        CHECK(std::abs(VectorFieldSpec{m, {{f, 1.0}}}.divergence(x.coords())) <= 1e-10);
      }
}

TEST_CASE("lifted columns match the hand-derived lifts", "[perturb]") {
  FieldBasis basis{t2, default_basis_fields(t2), 1};
  RandomStream rng(9, 0);
  for (int k = 0; k < 100; ++k) {
    const double x1 = rng.uniform(), x2 = rng.uniform(), theta = rng.uniform(0, std::numbers::pi);
    const Subspace s = Subspace::line(t2, Point::on(t2, vec({x1, x2})), theta);
    const Matrix got = detail::lifted_columns(basis, s);
    const Matrix want = t2_lift_oracle(x1, x2, theta);
    CHECK(lift_mismatch(got, want) <= 1e-12);
    CHECK(detail::best_minor(got, 3).det == Approx(oracle_best_minor(want)).epsilon(1e-12));
  }
}

TEST_CASE("build_field_basis certifies the T^2 basis", "[perturb]") {
  const GridSpec g = coarse(16, 90);
  const FieldBasis basis = build_field_basis(t2, 1, g, Exec{4});
  CHECK(basis.lifted_dim() == 3);
  CHECK(basis.grid_size == 16 * 16 * 90);
  CHECK(basis.kappa > kKappaMin);

  // oracle: direct minimization over the same grid
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int a = 0; a < 90; ++a)
        lo = std::min(lo, oracle_best_minor(t2_lift_oracle(i / 16.0, j / 16.0, std::numbers::pi * a / 90)));
  CHECK(basis.kappa == Approx(lo).epsilon(1e-12));

  // reproducible, thread-independent
  CHECK(build_field_basis(t2, 1, g).kappa == basis.kappa);
}

TEST_CASE("deficient bases are rejected", "[perturb]") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ConfigInvalid;
  };
  CHECK(code_of([] {
          build_field_basis(t2, 1, {ConstantField{0}, ConstantField{1}}, coarse(4, 8));
        }) == ErrorCode::BasisDeficient);
  const ManifoldSpec s2 = ManifoldSpec::sphere(2);
  // Gr(S^2, 1) has dimension 3: two generators cannot span it
  CHECK(code_of([&] {
          build_field_basis(s2, 1, {RotationField{0, 1}, RotationField{1, 2}}, coarse(20, 8));
        }) == ErrorCode::BasisDeficient);
  // SO(3) acts simply transitively on unit tangent vectors, so the three
  // generators lift to an orthonormal frame and the minor is exactly 1
  const auto rot = build_field_basis(s2, 1, {RotationField{0, 1}, RotationField{0, 2}, RotationField{1, 2}}, coarse(20, 8));
  CHECK(rot.lifted_dim() == 3);
  CHECK(rot.kappa == Approx(1.0).margin(1e-12));
  CHECK(build_field_basis(s2, 1, coarse(40, 12)).kappa >= rot.kappa - 1e-12);
  CHECK_THROWS_AS(build_field_basis(t2, 2, coarse(4, 8)), Error);
}

TEST_CASE("perturbed_family", "[perturb]") {
  const FieldBasis basis{t2, default_basis_fields(t2), 1};
  const std::vector<Diffeo> f = {maps::cat_map(), maps::shear(0.3), maps::identity_torus(2)};

  SECTION("B = 0 leaves the maps bit-equal") {
    const auto out = perturbed_family(f, basis, {Matrix::Zero(3, 6), 0.0});
    REQUIRE(out.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == f[i]);
  }
  SECTION("a constant field translates") {
    Matrix b = Matrix::Zero(1, 6);
    b(0, 0) = 0.07;
    const auto out = perturbed_family({maps::identity_torus(2)}, basis, {b, 0.07});
    const Point y = out[0].apply(Point::on(t2, vec({0.2, 0.9})));
    CHECK(y[0] == Approx(0.27).margin(1e-12));
    CHECK(y[1] == Approx(0.9).margin(1e-12));
  }
  SECTION("C0 distance is bounded by |B| |A| max field norm") {
    RandomStream rng(2, 0);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix b = sample_perturbation(3, 6, 0.05, 17, trial + 1);
      const auto out = perturbed_family(f, basis, {b, 0.05});
      for (int k = 0; k < 20; ++k) {
        const Point x = points::random_point(t2, rng);
        for (std::size_t i = 0; i < 3; ++i) {
          CHECK(distance(t2, out[i].apply(x), f[i].apply(x)) <= perturbation_norm(b) * 6 * 1.0 + 1e-12);
          CHECK(std::abs(std::abs(out[i].differential(x).determinant()) - 1) <= 1e-6);
        }
      }
    }
  }
  SECTION("|B| above epsilon is rejected") {
    Matrix b = Matrix::Zero(3, 6);
    b(1, 2) = 0.2;
    CHECK_THROWS_AS(perturbed_family(f, basis, {b, 0.1}), Error);
    CHECK_THROWS_AS(perturbed_family(f, basis, {Matrix::Zero(2, 6), 0.1}), Error);
  }
}

TEST_CASE("phi_jacobian at B = 0 matches the analytic lift", "[perturb]") {
  const FieldBasis basis{t2, default_basis_fields(t2), 1};
  const std::vector<Diffeo> f = {maps::cat_map(), maps::shear(0.3), maps::identity_torus(2)};
  RandomStream rng(6, 0);
  for (int k = 0; k < 10; ++k) {
    const Point x = points::random_point(t2, rng);
    const Subspace s = Subspace::line(t2, x, rng.uniform(0, std::numbers::pi));
    const auto j = phi_jacobian(f, basis, s, {Matrix::Zero(3, 6), 0.0});
    REQUIRE(j.jacobian.rows() == 9);
    REQUIRE(j.jacobian.cols() == 18);
    CHECK(j.analytic_mismatch <= 1e-4);
    CHECK(j.off_block <= 1e-6);
    // the analytic block at f_i(x, E) against the hand-derived lift
    for (std::size_t i = 0; i < 3; ++i) {
      const Subspace img = pushforward(f[i], s);
      const double theta = desk::line_angle(img.basis.col(0));
      const Matrix want = t2_lift_oracle(img.base[0], img.base[1], theta);
      const Matrix got = j.jacobian.block(3 * static_cast<Eigen::Index>(i), 6 * static_cast<Eigen::Index>(i), 3, 6);
      CHECK(lift_mismatch(got, want) <= 1e-4);
    }
    CHECK(j.subsets.size() == 3);
    CHECK(j.best_det > 0.0);
  }
}

TEST_CASE("phi_jacobian with one map reduces to the single block", "[perturb]") {
  const FieldBasis basis{t2, default_basis_fields(t2), 1};
  const Diffeo f = maps::cat_map();
  const Subspace s = Subspace::line(t2, Point::on(t2, vec({0.31, 0.77})), 0.4);
  const auto j = phi_jacobian({f}, basis, s, {Matrix::Zero(1, 6), 0.0});
  const double block = detail::best_minor(detail::lifted_columns(basis, pushforward(f, s)), 3).det;
  CHECK(j.best_det == Approx(block).margin(1e-4));
  // away from B = 0 there is no analytic reference but the FD stays consistent
  Matrix b = Matrix::Zero(1, 6);
  b(0, 2) = 0.05;
  b(0, 5) = -0.03;
  const auto moved = phi_jacobian({f}, basis, s, {b, 0.05});
  CHECK(moved.analytic.size() == 0);
  CHECK(moved.best_det > 0.0);
  CHECK_THROWS_AS(phi_jacobian({f}, basis, s, {Matrix::Zero(1, 6), 0.0}, 1e-2), Error);
}

TEST_CASE("phi_jacobian on S^2", "[perturb]") {
  const ManifoldSpec s2 = ManifoldSpec::sphere(2);
  const FieldBasis basis{s2, default_basis_fields(s2), 1};
  RandomStream rng(8, 0);
  Matrix q(3, 3);
  for (int j = 0; j < 9; ++j) q(j / 3, j % 3) = rng.normal();
  Matrix r = linalg::qr_positive(q).q;
  if (r.determinant() < 0) r.col(0) *= -1;
  const Point x = points::random_point(s2, rng);
  const Subspace s = Subspace::line(s2, x, 1.1);
  const auto j = phi_jacobian({maps::rotation(r)}, basis, s, {Matrix::Zero(1, 9), 0.0});
  CHECK(j.analytic_mismatch <= 1e-4);
}

TEST_CASE("search_nontransverse_B", "[perturb]") {
  const FieldBasis basis{t2, default_basis_fields(t2), 1};
  const SubspaceField e1 = constant_field(desk::stable_line());
  PerturbSearchOptions o;
  o.grid = coarse(4, 36);

  SECTION("an already nontransverse family accepts B = 0") {
    o.tau = desk::tau();
    o.tries = 5;
    const auto r = search_nontransverse_B(desk::shears(), basis, e1, o);
    CHECK(r.found);
    CHECK(r.try_index == 0);
    CHECK(perturbation_norm(r.params.b) == 0.0);
  }
  SECTION("epsilon = 0 samples only B = 0") {
    o.epsilon = 0.0;
    o.tries = 50;
    const auto r = search_nontransverse_B({maps::identity_torus(2)}, basis, e1, o);
    CHECK_FALSE(r.found);
    CHECK(r.tries_used == 1);
    CHECK(r.best_fraction == 0.0);
  }
  SECTION("draws are seeded and replayable") {
    o.epsilon = 0.2;
    o.tries = 3;
    o.seed = 11;
    const std::vector<Diffeo> ids(3, maps::identity_torus(2));
    const auto a = search_nontransverse_B(ids, basis, e1, o);
    const auto b = search_nontransverse_B(ids, basis, e1, o);
    CHECK(a.found == b.found);
    CHECK(a.best_try == b.best_try);
    CHECK(a.params.b == b.params.b);
    CHECK(a.params.b == sample_perturbation(3, 6, 0.2, 11, a.best_try));
    CHECK(perturbation_norm(sample_perturbation(3, 6, 0.2, 11, 2)) <= 0.2);
    CHECK(sample_perturbation(3, 6, 0.2, 11, 1) != sample_perturbation(3, 6, 0.2, 11, 2));
  }
  CHECK_THROWS_AS(search_nontransverse_B({maps::identity_torus(2)}, basis, e1, [&] {
                    auto bad = o;
                    bad.tries = 0;
                    return bad;
                  }()),
                  Error);
}
