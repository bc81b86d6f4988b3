#include "ifscert/randomwords.hpp"

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

Matrix random_rotation(RandomStream& rng) {
  Matrix g(3, 3);
  for (int i = 0; i < 9; ++i) g(i / 3, i % 3) = rng.normal();
  Matrix q = linalg::qr_positive(g).q;
  if (q.determinant() < 0) q.col(0) *= -1;
  return q;
}

double relative_error(const Matrix& a, const Matrix& b) {
  return linalg::max_abs_entry(a - b) / std::max(1.0, linalg::max_abs_entry(b));
}

}  // namespace

TEST_CASE("sample_word", "[randomwords]") {
  SECTION("single-letter alphabet") {
    const Word w = sample_word({1, 99}, 17, 3);
    CHECK(w.size() == 17);
    for (auto l : w.letters) CHECK(l == 0);
  }
  SECTION("deterministic in (seed, stream, n)") {
    const Word a = sample_word({5, 7}, 4, 0);
    const Word b = sample_word({5, 7}, 4, 0);
    CHECK(a.letters == b.letters);
    CHECK(sample_word({5, 7}, 4, 1).letters != a.letters);
    // prefixes agree across lengths
    const Word c = sample_word({5, 7}, 40, 0);
    CHECK(std::equal(a.letters.begin(), a.letters.end(), c.letters.begin()));
  }
  SECTION("binomial concentration for m = 2") {
    int ones = 0;
    for (std::uint64_t s = 0; s < 100000; ++s) ones += sample_word({2, 2024}, 1, s).letters[0] == 0;
    const double freq = ones / 1e5;
    CHECK(freq >= 0.495);
    CHECK(freq <= 0.505);
  }
  SECTION("chi-square uniformity, p > 0.001") {
    // 0.999 quantiles of chi-square with 1 and 4 degrees of freedom.
    const std::pair<int, double> cases[] = {{2, 10.827566}, {5, 18.466827}};
    for (auto [m, critical] : cases) {
      std::vector<double> counts(m, 0.0);
      for (std::uint64_t s = 0; s < 20000; ++s)
        for (auto l : sample_word({static_cast<std::uint64_t>(m), 31}, 5, s).letters) counts[l] += 1;
      const double expected = 100000.0 / m;
      double chi2 = 0.0;
      for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
      CHECK(chi2 < critical);
    }
  }
}

TEST_CASE("cocycle reconstruction", "[randomwords]") {
  const auto t2 = ManifoldSpec::torus(2);
  SECTION("cat map cubed") {
    const IfsSpec ifs({maps::cat_map()});
    const Composition c = compose(ifs, sample_word({1, 0}, 3, 0), Point::on(t2, vec({0.2, 0.3})));
    Matrix a3(2, 2);
    a3 << 13, 8, 8, 5;
    CHECK(linalg::max_abs_entry(c.cocycle.reconstruct() - a3) <= 1e-9);
    CHECK(c.trajectory.size() == 4);
  }
  SECTION("empty word gives identity") {
    const IfsSpec ifs({maps::cat_map()});
    const Composition c = compose(ifs, Word{}, Point::on(t2, vec({0.2, 0.3})));
    CHECK(c.trajectory.size() == 1);
    CHECK(c.cocycle.reconstruct() == Matrix::Identity(2, 2));
  }
  SECTION("rotations keep unit singular values") {
    RandomStream rng(1, 0);
    const IfsSpec ifs({maps::rotation(random_rotation(rng)), maps::rotation(random_rotation(rng)),
                       maps::rotation(random_rotation(rng))});
    const auto s2 = ManifoldSpec::sphere(2);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Composition c = compose(ifs, sample_word({3, 5}, 50, s), points::random_point(s2, rng));
      const Vector sv = linalg::singular_values(c.cocycle.reconstruct());
      CHECK((sv.array() - 1.0).abs().maxCoeff() <= 1e-10);
      CHECK(c.cocycle.log_r().cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
  SECTION("direct product agreement for random words, n <= 20 (and entry frames)") {
    const IfsSpec ifs({maps::cat_map(), maps::shear(0.6), maps::then(maps::shear(-0.3), maps::cat_map().inverse())});
    RandomStream rng(2, 0);
    for (std::uint64_t s = 0; s < 50; ++s) {
      const std::size_t n = 1 + s % 20;
      const Word w = sample_word({3, 8}, n, s);
      const Point x = Point::on(t2, vec({0.3, 0.4}));
      Matrix direct = Matrix::Identity(2, 2);
      Point y = x;
      for (auto l : w.letters) {
        direct = ifs.map(l).differential(y) * direct;
        y = ifs.map(l).apply(y);
      }
      const double theta = rng.uniform(0, std::numbers::pi);
      Matrix frame(2, 2);
      frame << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      const Composition c = compose(ifs, w, x, n, frame);
      CHECK(relative_error(c.cocycle.reconstruct(), direct) <= 1e-8);
    }
  }
  SECTION("flow-map cocycle in 3D") {
    const auto t3 = ManifoldSpec::torus(3);
    VectorFieldSpec v{t3, {{ShearField{0, 1, 1, false}, 0.3}, {ShearField{2, 0, 1, true}, 0.2},
                           {ShearField{1, 2, 1, false}, 0.25}}};
    const IfsSpec ifs({maps::flow(v, 1.0, 1e-2), maps::linear_toral({{1, 1, 0}, {0, 1, 1}, {0, 0, 1}})});
    const Word w = sample_word({2, 4}, 12, 0);
    const Point x = Point::on(t3, vec({0.1, 0.5, 0.9}));
    Matrix direct = Matrix::Identity(3, 3);
    Point y = x;
    for (auto l : w.letters) {
      direct = ifs.map(l).differential(y) * direct;
      y = ifs.map(l).apply(y);
    }
    CHECK(relative_error(compose(ifs, w, x).cocycle.reconstruct(), direct) <= 1e-8);
  }
}

TEST_CASE("shift compatibility", "[randomwords][property]") {
  const auto t2 = ManifoldSpec::torus(2);
  VectorFieldSpec v{t2, {{ShearField{0, 1, 1, false}, 0.3}}};
  const IfsSpec ifs({maps::cat_map(), maps::flow(v, 1.0, 1e-2)});
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Word w = sample_word({2, 1}, 15, s);
    const Point x = Point::on(t2, vec({0.4, 0.15}));
    const Matrix id = Matrix::Identity(2, 2);
    const Composition longer = compose(ifs, w, x, 15, id);
    const Composition shorter = compose(ifs, w, x, 14, id);
    const Point next = ifs.map(w.letters[14]).apply(shorter.trajectory.back());
    CHECK(longer.trajectory.back() == next);
    for (std::size_t k = 0; k < shorter.trajectory.size(); ++k) CHECK(longer.trajectory[k] == shorter.trajectory[k]);
  }
}

TEST_CASE("two-sided compositions", "[randomwords]") {
  const auto t2 = ManifoldSpec::torus(2);
  const IfsSpec ifs({maps::cat_map()});
  Word w = sample_word({1, 0}, 30, 0);
  w.offset = 15;
  const Point x = Point::on(t2, vec({0.25, 0.6}));
  SECTION("j = 0 is the identity") {
    const Composition c = two_sided_compose(ifs, w, 0, 0, x, Direction::Forward);
    CHECK(c.cocycle.reconstruct() == Matrix::Identity(2, 2));
    CHECK(c.trajectory.back() == x);
  }
  SECTION("forward from k = 0 reproduces compose") {
    Word one = sample_word({1, 0}, 6, 0);
    const Composition a = two_sided_compose(ifs, one, 0, 6, x, Direction::Forward);
    const Composition b = compose(ifs, one, x);
    CHECK(a.trajectory.back() == b.trajectory.back());
    CHECK(a.cocycle.reconstruct() == b.cocycle.reconstruct());
  }
  SECTION("backward products invert the cat map") {
    Matrix a_inv(2, 2);
    a_inv << 1, -1, -1, 2;
    Matrix expected = Matrix::Identity(2, 2);
    for (int j = 1; j <= 10; ++j) {
      expected = a_inv * expected;
      const Composition c = two_sided_compose(ifs, w, 3, j, x, Direction::Backward);
      CHECK(relative_error(c.cocycle.reconstruct(), expected) <= 1e-9);
    }
  }
  SECTION("coverage errors") {
    CHECK_THROWS_AS(two_sided_compose(ifs, w, 10, 10, x, Direction::Forward), Error);
    CHECK_THROWS_AS(two_sided_compose(ifs, w, -10, 10, x, Direction::Backward), Error);
  }
  SECTION("backward undoes forward on points") {
    const IfsSpec mixed({maps::cat_map(), maps::translation(vec({0.3, 0.1}))});
    Word u = sample_word({2, 9}, 20, 0);
    u.offset = 10;
    const Composition fwd = two_sided_compose(mixed, u, -5, 8, x, Direction::Forward);
    const Composition back = two_sided_compose(mixed, u, 3, 8, fwd.trajectory.back(), Direction::Backward);
    CHECK(torus_displacement(back.trajectory.back(), x).norm() <= 1e-9);
  }
}
