#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "volume_oracles.hpp"
#include "vskel/losses.hpp"
#include "vskel/metrics.hpp"
#include "vskel/skeleton.hpp"

using namespace vskel;
using namespace vskel::metrics;

namespace {

PointSet random_points(std::size_t n, unsigned seed, double scale) {
  auto r = oracle::random_vector(3 * n, seed, 0.0, scale);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({r[3 * i], r[3 * i + 1], r[3 * i + 2] * 0.2});
  return PointSet(pts);
}

}  // namespace

TEST_CASE("dice score") {
  Volume a({10, 10, 2}, kDefaultSpacing, VolumeKind::Mask), b = a;
  CHECK(dice_score(a, b) == 1.0);
  for (std::size_t i = 0; i < 100; ++i) a.data[i] = 1.0;
  CHECK(dice_score(a, a) == 1.0);
  for (std::size_t i = 100; i < 200; ++i) b.data[i] = 1.0;
  CHECK(dice_score(a, b) == 0.0);
  for (std::size_t i = 50; i < 150; ++i) b.data[i] = i < 100 ? 1.0 : 0.0;
  for (std::size_t i = 150; i < 200; ++i) b.data[i] = 1.0;
  CHECK(dice_score(a, b) == doctest::Approx(0.5));
  Volume c({3, 3, 3}, kDefaultSpacing, VolumeKind::Mask);
  CHECK_THROWS_AS(dice_score(a, c), std::invalid_argument);

  // agrees with 1 - dice loss at delta 0 for binary inputs
  for (unsigned seed = 0; seed < 5; ++seed) {
    auto ra = oracle::random_vector(200, seed, 0.0, 1.0), rb = oracle::random_vector(200, seed + 50, 0.0, 1.0);
    std::vector<double> x(200), y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      x[i] = a.data[i] = ra[i] < 0.4;
      y[i] = b.data[i] = rb[i] < 0.3;
    }
    auto loss = loss::dice(Tensor::from({200}, x), Tensor::from({200}, y), 0.0);
    CHECK(dice_score(a, b) == doctest::Approx(1.0 - loss.item()).epsilon(1e-12));
  }
}

TEST_CASE("nearest distances match brute force exactly") {
  for (unsigned seed = 0; seed < 3; ++seed) {
    auto a = random_points(1000, seed, 100.0), b = random_points(1000, seed + 9, 100.0);
    auto fast = nearest_distances(a, b);
    auto slow = oracle::brute_nearest(a.points, b.points);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == slow[i]);
  }
  // far-away queries and a single-point target
  PointSet b({{0, 0, 0}});
  PointSet a({{1000, -500, 3}, {1, 2, 2}});
  auto d = nearest_distances(a, b);
  CHECK(d == oracle::brute_nearest(a.points, b.points));
  CHECK(nearest_distances(b, b) == std::vector<double>{0.0});
  CHECK_THROWS_AS(nearest_distances(a, PointSet{}), std::invalid_argument);
}

TEST_CASE("modified Hausdorff distance") {
  PointSet a({{0, 0, 0}}), b({{3, 0, 0}, {0, 4, 0}});
  CHECK(mhd(a, b) == doctest::Approx(3.5));
  CHECK(mhd(b, a) == mhd(a, b));
  CHECK(mhd(b, b) == 0.0);
  CHECK_THROWS_AS(mhd(a, PointSet{}), std::invalid_argument);
  auto p = random_points(300, 4, 50.0), q = random_points(200, 5, 50.0);
  CHECK(mhd(p, q) == oracle::brute_mhd(p.points, q.points));
  std::vector<Point> ps = p.points, qs = q.points;
  for (auto& x : ps) x = {x[0] + 7.25, x[1] - 3.5, x[2] + 11.0};
  for (auto& x : qs) x = {x[0] + 7.25, x[1] - 3.5, x[2] + 11.0};
  CHECK(mhd(PointSet(ps), PointSet(qs)) == doctest::Approx(mhd(p, q)).epsilon(1e-12));
}

TEST_CASE("coverage") {
  PointSet t({{0, 0, 0}, {30, 0, 0}});
  CHECK(coverage(t, t) == 1.0);
  CHECK(coverage(t, PointSet{}) == 0.0);
  CHECK(coverage(t, PointSet({{0, 0, 0}}), 20.0) == 0.5);
  CHECK_THROWS_AS(coverage(PointSet{}, t), std::invalid_argument);
  auto a = random_points(200, 1, 80.0), b = random_points(50, 2, 80.0);
  double prev = 0.0;
  for (double r = 0.0; r < 60.0; r += 2.5) {
    const double c = coverage(a, b, r);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("point sets from volumes are deduplicated and scaled") {
  Volume v({4, 4, 2}, kDefaultSpacing, VolumeKind::Skeleton);
  v.at(1, 2, 1) = 1.0;
  auto p = points_of(v);
  REQUIRE(p.size() == 1);
  CHECK(p.points[0][0] == doctest::Approx(0.83));
  CHECK(p.points[0][1] == doctest::Approx(1.66));
  CHECK(p.points[0][2] == doctest::Approx(5.0));
  CHECK(PointSet({{1, 1, 1}, {1, 1, 1}}).size() == 1);
}

TEST_CASE("node distance") {
  SkeletonGraph g;
  g.add_node({0, 0, 0});
  g.add_node({40, 0, 0});
  g.add_edge(0, 1, {{0, 0, 0}, {40, 0, 0}});
  SkeletonGraph h = g;
  for (auto& n : h.nodes) n.pos[1] += 5.0;
  CHECK(node_distance(g, g) == 0.0);
  CHECK(node_distance(g, h) == doctest::Approx(5.0));

  SkeletonGraph loop;
  loop.add_node({0, 0, 0});
  loop.add_edge(0, 0, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 0}});
  CHECK_THROWS_AS(node_distance(g, loop), std::invalid_argument);

  // against the stand-in definition evaluated directly
  for (unsigned seed = 0; seed < 3; ++seed) {
    Volume m({30, 30, 8}, kDefaultSpacing, VolumeKind::Mask);
    auto r = oracle::random_vector(m.size(), seed, 0.0, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r[i] < 0.2;
    auto ga = to_graph(thin(m));
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r[(i + 97) % m.size()] < 0.2;
    auto gb = to_graph(thin(m));
    CHECK(node_distance(ga, gb) == oracle::brute_mhd(PointSet(ga.key_points()).points, PointSet(gb.key_points()).points));
  }
}
