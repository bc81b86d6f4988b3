#include "ifscert/transitivity.hpp"

#include "desk.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace ifscert;
using Catch::Approx;

namespace {

const ManifoldSpec t2 = ManifoldSpec::torus(2);

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

IfsSpec double_translation() {
  return IfsSpec({maps::translation(vec({std::sqrt(2.0) - 1, 0.0})), maps::translation(vec({0.0, std::sqrt(3.0) - 1}))});
}

// Brute force: every net center against every orbit point.
std::size_t brute_visited(const std::vector<Point>& centers, const std::vector<Point>& orbit, double eps,
                          const ManifoldSpec& m) {
  std::size_t hit = 0;
  for (const auto& c : centers) {
    bool any = false;
    for (const auto& x : orbit) any = any || distance(m, c, x) <= eps;
    hit += any;
  }
  return hit;
}

std::vector<Point> orbit_of(const IfsSpec& ifs, Point x, std::int64_t n, const WordDistribution& dist) {
  const Word w = sample_word(dist, static_cast<std::size_t>(n), 0);
  std::vector<Point> out{x};
  for (std::int64_t k = 0; k < n; ++k) out.push_back(x = ifs.map(w.letters[static_cast<std::size_t>(k)]).apply(x));
  return out;
}

}  // namespace

TEST_CASE("the net lookup agrees with brute force", "[transitivity]") {
  const IfsSpec ifs = desk::ifs(3);
  const WordDistribution dist{ifs.size(), 5};
  const Point x0 = Point::on(t2, vec({0.1, 0.7}));
  for (double eps : {0.3, 0.11, 0.05}) {
    const auto r = orbit_density(ifs, x0, 300, eps, dist);
    const int res = static_cast<int>(std::ceil(std::sqrt(2.0) / eps - 1e-12));
    const auto centers = points::torus_lattice(t2, res);
    CHECK(r.balls_total == centers.size());
    CHECK(r.balls_visited == brute_visited(centers, orbit_of(ifs, x0, 300, dist), eps, t2));
  }
}

TEST_CASE("the lattice is an eps/2-net", "[transitivity]") {
  for (double eps : {0.2, 0.05}) {
    const int res = static_cast<int>(std::ceil(std::sqrt(2.0) / eps - 1e-12));
    // worst point of a lattice cell is its center
    CHECK(std::sqrt(2.0) / (2.0 * res) <= eps / 2);
  }
}

TEST_CASE("identity covers only the balls around x0", "[transitivity]") {
  const IfsSpec ifs({maps::identity_torus(2)});
  const Point x0 = Point::on(t2, vec({0.013, 0.5}));
  const auto r = orbit_density(ifs, x0, 1000, 0.05, {1, 0});
  const auto centers = points::torus_lattice(t2, 29);
  CHECK(r.balls_visited == brute_visited(centers, {x0}, 0.05, t2));
  CHECK(r.balls_visited >= 1);
  CHECK(r.coverage() < 0.02);
}

TEST_CASE("rationally independent double translation fills the torus", "[transitivity]") {
  const IfsSpec ifs = double_translation();
  const WordDistribution dist{2, 1};
  const auto r = orbit_density(ifs, reference_point(t2), 100000, 0.05, dist, 0, {10, 100, 1000, 10000, 100000});
  CHECK(r.coverage() == 1.0);
  REQUIRE(r.curve.size() == 5);
  for (std::size_t i = 1; i < r.curve.size(); ++i) CHECK(r.curve[i].second >= r.curve[i - 1].second);
  CHECK(r.curve.back().second == r.coverage());

  // long-run frequencies over a 4 x 4 partition approach 1/16
  const auto orbit = orbit_of(ifs, reference_point(t2), 100000, dist);
  std::vector<int> counts(16, 0);
  for (const auto& x : orbit) ++counts[static_cast<std::size_t>(static_cast<int>(x[0] * 4) + 4 * static_cast<int>(x[1] * 4))];
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(orbit.size()) - 1.0 / 16) <= 0.01);
}

TEST_CASE("coverage grows along a fixed word prefix", "[transitivity]") {
  const IfsSpec ifs = desk::ifs(5);
  const WordDistribution dist{ifs.size(), 2};
  const Point x0 = Point::on(t2, vec({0.3, 0.3}));
  double previous = 0.0;
  for (std::int64_t n : {1, 10, 100, 1000}) {
    const double c = orbit_density(ifs, x0, n, 0.1, dist).coverage();
    CHECK(c >= previous);
    previous = c;
  }
  // curve checkpoints agree with separate runs on the same prefix
  const auto full = orbit_density(ifs, x0, 1000, 0.1, dist, 0, {10, 100});
  CHECK(full.curve[0].second == orbit_density(ifs, x0, 10, 0.1, dist).coverage());
  CHECK(full.curve[1].second == orbit_density(ifs, x0, 100, 0.1, dist).coverage());
}

TEST_CASE("desk IFS orbit spreads over the torus", "[transitivity]") {
  const IfsSpec ifs = desk::ifs(50);
  const auto r = orbit_density(ifs, Point::on(t2, vec({0.2, 0.4})), 20000, 0.05, {ifs.size(), 3});
  CHECK(r.coverage() >= 0.99);
}

TEST_CASE("sphere probe", "[transitivity]") {
  const ManifoldSpec s2 = ManifoldSpec::sphere(2);
  RandomStream rng(3, 0);
  std::vector<Diffeo> rots;
  for (int i = 0; i < 2; ++i) {
    Matrix g(3, 3);
    for (int j = 0; j < 9; ++j) g(j / 3, j % 3) = rng.normal();
    Matrix q = linalg::qr_positive(g).q;
    if (q.determinant() < 0) q.col(0) *= -1;
    rots.push_back(maps::rotation(q));
  }
  const IfsSpec ifs(rots);
  const WordDistribution dist{2, 4};
  const auto r = orbit_density(ifs, reference_point(s2), 400, 0.2, dist);
  const auto centers = points::sphere_points(s2, static_cast<int>(std::ceil(32.0 / 0.04)), 0);
  CHECK(r.balls_total == centers.size());
  CHECK(r.balls_visited == brute_visited(centers, orbit_of(ifs, reference_point(s2), 400, dist), 0.2, s2));
}

TEST_CASE("determinism and validation", "[transitivity]") {
  const IfsSpec ifs = double_translation();
  const auto a = orbit_density_words(ifs, reference_point(t2), 500, 0.1, {2, 9}, 4, Exec{1});
  const auto b = orbit_density_words(ifs, reference_point(t2), 500, 0.1, {2, 9}, 4, Exec{4});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].balls_visited == b[i].balls_visited);
    CHECK(a[i].stream == i);
  }
  CHECK_THROWS_AS(orbit_density(ifs, reference_point(t2), 0, 0.1, {2, 0}), Error);
  CHECK_THROWS_AS(orbit_density(ifs, reference_point(t2), 10, 0.0, {2, 0}), Error);
  CHECK_THROWS_AS(orbit_density(ifs, reference_point(t2), 10, 0.1, {3, 0}), Error);
}
