#include "ifscert/maps.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace ifscert;
using Catch::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix rot_z(double a) {
  Matrix r(3, 3);
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

VectorFieldSpec sin_shear_field(double coefficient = 1.0) {
  return {ManifoldSpec::torus(2), {{ShearField{0, 1, 1, false}, coefficient}}};
}

double torus_gap(const Point& a, const Point& b) { return torus_displacement(a, b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("apply", "[maps]") {
  const auto t2 = ManifoldSpec::torus(2);
  const auto s2 = ManifoldSpec::sphere(2);
  SECTION("cat map reduces mod 1") {
    const Point y = maps::cat_map().apply(Point::on(t2, vec({0.5, 0.5})));
    CHECK(y[0] == Approx(0.5));
    CHECK(y[1] == Approx(0.0).margin(1e-15));
  }
  SECTION("rotation by pi/2 about z") {
    const Point y = maps::rotation(rot_z(std::numbers::pi / 2)).apply(Point::on(s2, vec({1, 0, 0})));
    CHECK((y.coords() - vec({0, 1, 0})).norm() <= 1e-15);
  }
  SECTION("flow map converges under step refinement") {
    const auto f_coarse = maps::flow(sin_shear_field(), 1.0, 1e-2);
    const auto f_fine = maps::flow(sin_shear_field(), 1.0, 1e-3);
    for (const Vector& x : {vec({0, 0}), vec({0.3, 0.1}), vec({0.77, 0.61})}) {
      const Point p = Point::on(t2, x);
      CHECK(torus_gap(f_coarse.apply(p), f_fine.apply(p)) <= 1e-8);
    }
  }
  SECTION("nonlinear flow (both shear directions) converges under step refinement") {
    VectorFieldSpec v{t2, {{ShearField{0, 1, 1, false}, 0.3}, {ShearField{1, 0, 1, true}, 0.2}}};
    const Point p = Point::on(t2, vec({0.13, 0.71}));
    CHECK(torus_gap(maps::flow(v, 1.0, 1e-2).apply(p), maps::flow(v, 1.0, 1e-3).apply(p)) <= 1e-8);
  }
  SECTION("step guard") {
    CHECK_THROWS_AS(maps::flow(sin_shear_field(), 1.0, 0.5), Error);
    try {
      maps::flow(sin_shear_field(), 1.0, 0.5);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StepTooLarge);
    }
  }
}

TEST_CASE("construction validates invariants", "[maps]") {
  CHECK_THROWS_AS(maps::linear_toral({{2, 0}, {0, 1}}), Error);
  Matrix not_rot = Matrix::Identity(3, 3);
  not_rot(0, 1) = 0.1;
  CHECK_THROWS_AS(maps::rotation(not_rot), Error);
  Matrix reflection = Matrix::Identity(3, 3);
  reflection(2, 2) = -1;
  CHECK_THROWS_AS(maps::rotation(reflection), Error);
  Matrix bad(2, 2);
  bad << 2, 0, 0, 1;
  CHECK_THROWS_AS(Diffeo(ToralAffine{bad, Vector::Zero(2)}), Error);
  CHECK_THROWS_AS(maps::then(maps::cat_map(), maps::rotation(rot_z(0.1))), Error);
}

TEST_CASE("differential", "[maps]") {
  const auto t2 = ManifoldSpec::torus(2);
  const auto s2 = ManifoldSpec::sphere(2);
  SECTION("linear map returns its matrix") {
    Matrix a(2, 2);
    a << 2, 1, 1, 1;
    CHECK(maps::cat_map().differential(Point::on(t2, vec({0.1, 0.9}))) == a);
  }
  SECTION("rotation differential is an isometry") {
    Matrix r = rot_z(0.7);
    const Matrix q = Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
    const auto f = maps::rotation(q * r);
    RandomStream rng(5, 0);
    for (int i = 0; i < 50; ++i) {
      const Vector s = linalg::singular_values(f.differential(points::random_point(s2, rng)));
      CHECK((s.array() - 1.0).abs().maxCoeff() <= 1e-10);
    }
  }
  SECTION("flow differential preserves volume and matches finite differences") {
    VectorFieldSpec v{t2, {{ShearField{0, 1, 1, false}, 0.4}, {ShearField{1, 0, 1, true}, 0.3}}};
    const auto f = maps::flow(v, 1.0, 1e-2);
    RandomStream rng(9, 0);
    for (int i = 0; i < 1000; ++i) {
      const Point x = points::random_point(t2, rng);
      CHECK(std::abs(f.differential(x).determinant() - 1.0) <= 1e-6);
    }
    const Point x = Point::on(t2, vec({0.21, 0.37}));
    const Matrix j = f.differential(x);
    const double h = 1e-6;
    for (int c = 0; c < 2; ++c) {
      Vector e = Vector::Zero(2);
      e(c) = h;
      const Vector fd = (torus_displacement(f.apply(Point::on(t2, x.coords() - e)), f.apply(Point::on(t2, x.coords() + e)))) / (2 * h);
      CHECK((fd - j.col(c)).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
  SECTION("the sine shear flow has unit determinant") {
    const auto f = maps::flow(sin_shear_field(), 1.0, 1e-2);
    CHECK(std::abs(f.differential(Point::on(t2, vec({0, 0}))).determinant() - 1.0) <= 1e-6);
  }
  SECTION("sphere flow of a hamiltonian field is volume preserving") {
    VectorFieldSpec v{s2, {{HamiltonianField{0, 1}, 0.5}, {RotationField{1, 2}, 0.3}}};
    const auto f = maps::flow(v, 1.0, 1e-2);
    RandomStream rng(3, 0);
    for (int i = 0; i < 200; ++i) {
      const Point x = points::random_point(s2, rng);
      // sphere frames are not globally oriented, so only |det| is meaningful
      CHECK(std::abs(std::abs(f.differential(x).determinant()) - 1.0) <= 1e-6);
      CHECK(std::abs(f.apply(x).coords().norm() - 1.0) <= 1e-12);
    }
  }
  SECTION("chain rule for exact variants") {
    const auto a = maps::cat_map();
    const auto s = maps::shear(0.3);
    const auto composite = maps::then(s, a);
    RandomStream rng(1, 0);
    for (int i = 0; i < 100; ++i) {
      const Point x = points::random_point(t2, rng);
      const Matrix expected = a.differential(s.apply(x)) * s.differential(x);
      CHECK(linalg::max_abs_entry(composite.differential(x) - expected) <= 1e-9);
    }
    const Matrix r1 = rot_z(0.3);
    const Matrix r2 = Eigen::AngleAxisd(1.1, Eigen::Vector3d(0, 1, 1).normalized()).toRotationMatrix();
    const auto g1 = maps::rotation(r1);
    const auto g2 = maps::rotation(r2);
    const auto g = maps::then(g1, g2);
    for (int i = 0; i < 100; ++i) {
      const Point x = points::random_point(s2, rng);
      const Matrix expected = g2.differential(g1.apply(x)) * g1.differential(x);
      CHECK(linalg::max_abs_entry(g.differential(x) - expected) <= 1e-9);
    }
  }
}

TEST_CASE("inverse", "[maps]") {
  const auto t2 = ManifoldSpec::torus(2);
  const auto s2 = ManifoldSpec::sphere(2);
  SECTION("cat map inverse is the adjugate") {
    const auto inv = maps::cat_map().inverse();
    Eigen::MatrixXi expected(2, 2);
    expected << 1, -1, -1, 2;
    REQUIRE(inv.as<LinearToral>() != nullptr);
    CHECK(inv.as<LinearToral>()->matrix == expected);
  }
  SECTION("rotation inverse is the transpose") {
    const Matrix r = rot_z(0.9);
    CHECK(maps::rotation(r).inverse().as<SphereRotation>()->matrix == r.transpose());
  }
  SECTION("flow inverse reverses time; round trip is accurate") {
    const auto f = maps::flow(sin_shear_field(), 1.0, 1e-2);
    const auto inv = f.inverse();
    CHECK(inv.as<FlowMap>()->time == -1.0);
    RandomStream rng(4, 0);
    for (int i = 0; i < 1000; ++i) {
      const Point x = points::random_point(t2, rng);
      CHECK(torus_gap(inv.apply(f.apply(x)), x) <= 1e-7);
    }
  }
  SECTION("round trips for exact variants") {
    RandomStream rng(6, 0);
    const std::vector<Diffeo> fs = {maps::cat_map(), maps::shear(0.4), maps::translation(vec({0.3, 0.8})),
                                    maps::then(maps::shear(0.2), maps::cat_map())};
    for (const auto& f : fs) {
      const auto inv = f.inverse();
      for (int i = 0; i < 1000; ++i) {
        // Stay away from the fundamental-domain seam where real shears are discontinuous.
        const Point x = Point::on(t2, vec({0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform()}));
        CHECK(torus_gap(inv.apply(f.apply(x)), x) <= 1e-8);
      }
    }
    const auto g = maps::rotation(Eigen::AngleAxisd(2.0, Eigen::Vector3d(1, -1, 2).normalized()).toRotationMatrix());
    for (int i = 0; i < 1000; ++i) {
      const Point x = points::random_point(s2, rng);
      CHECK((g.inverse().apply(g.apply(x)).coords() - x.coords()).norm() <= 1e-12);
    }
  }
}

TEST_CASE("c1_norm_bound", "[maps]") {
  // Singular values of symmetric / shear matrices: (3+sqrt5)/2 and (1+sqrt5)/2.
  CHECK(c1_norm_bound(maps::cat_map(), 8).inflated == Approx((3 + std::sqrt(5.0)) / 2).epsilon(1e-12));
  CHECK(c1_norm_bound(maps::shear(1.0), 8).inflated == Approx((1 + std::sqrt(5.0)) / 2).epsilon(1e-12));
  CHECK(c1_norm_bound(maps::cat_map(), 8).exact);
  CHECK(c1_norm_bound(maps::rotation(rot_z(0.3)), 4).inflated == 1.0);
  const auto f = maps::flow(sin_shear_field(0.5), 1.0, 1e-2);
  const C1Bound b = c1_norm_bound(f, 16);
  CHECK_FALSE(b.exact);
  CHECK(b.grid_value > 1.0);
  CHECK(b.inflated > b.grid_value);
  // For this shear flow Df = [[1, t*pi*cos(2 pi x2)], [0, 1]]: sup at cos = +-1.
  const double s = 0.5 * 2 * std::numbers::pi;
  CHECK(b.grid_value == Approx((s + std::sqrt(s * s + 4)) / 2).epsilon(1e-6));
  CHECK_THROWS_AS(c1_norm_bound(f, 1), Error);
}

TEST_CASE("divergence of basis fields vanishes", "[maps][fields]") {
  const auto t3 = ManifoldSpec::torus(3);
  const auto s2 = ManifoldSpec::sphere(2);
  const auto s3 = ManifoldSpec::sphere(3);
  RandomStream rng(8, 0);
  std::vector<VectorFieldSpec> fields = {
      {t3, {{ShearField{0, 2, 2, true}, 1.0}, {ShearField{1, 0, 1, false}, -0.7}, {ConstantField{2}, 0.1}}},
      {s2, {{HamiltonianField{0, 1}, 1.0}, {HamiltonianField{2, 2}, 0.5}, {RotationField{0, 2}, 0.3}}},
      {s3, {{RotationField{0, 3}, 1.0}, {RotationField{1, 2}, -2.0}}},
  };
  for (const auto& v : fields) {
    for (int i = 0; i < 100; ++i) {
      const Point x = points::random_point(v.manifold, rng);
      CHECK(std::abs(v.divergence(x.coords())) <= 1e-12);
      if (v.manifold.is_sphere()) CHECK(std::abs(v.value(x.coords()).dot(x.coords())) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(maps::flow({t3, {{ShearField{1, 1, 1, false}, 1.0}}}, 1.0, 1e-2), Error);
}
