#include "vskel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace vskel::metrics {

PointSet::PointSet(std::vector<Point> pts) : points(std::move(pts)) {
  for (const auto& p : points)
    for (double c : p)
      if (!std::isfinite(c)) throw std::invalid_argument("PointSet: non-finite coordinate");
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
}

PointSet points_of(const Volume& v) {
  std::vector<Point> pts;
  for (std::size_t z = 0; z < v.nz(); ++z)
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x)
        if (v.at(x, y, z) != 0.0) pts.push_back(voxel_centre({long(x), long(y), long(z)}, v.spacing));
  return PointSet(std::move(pts));
}

double dice_score(const Volume& a, const Volume& b) {
  require_same_dims(a, b, "dice_score");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0.0, y = b.data[i] != 0.0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

namespace {

struct Grid {
  double cell = 1.0;
  Point lo{};
  std::unordered_map<long long, std::vector<std::size_t>> buckets;
  std::array<long, 3> max_index{0, 0, 0};

  static long long key(long i, long j, long k) {
    return (static_cast<long long>(i) * 2097152LL + j) * 2097152LL + k;
  }
  std::array<long, 3> cell_of(const Point& p) const {
    return {long(std::floor((p[0] - lo[0]) / cell)), long(std::floor((p[1] - lo[1]) / cell)),
            long(std::floor((p[2] - lo[2]) / cell))};
  }
};

Grid build_grid(const PointSet& b) {
  Grid g;
  Point lo = b.points.front(), hi = lo;
  for (const auto& p : b.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  // about two points per occupied cell for a curve-like set
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
  g.cell = std::max(extent / std::max(1.0, std::cbrt(double(b.size()))), 1e-6);
  g.lo = lo;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto c = g.cell_of(b.points[i]);
    for (int a = 0; a < 3; ++a) g.max_index[a] = std::max(g.max_index[a], c[a]);
    g.buckets[Grid::key(c[0], c[1], c[2])].push_back(i);
  }
  return g;
}

}  // namespace

std::vector<double> nearest_distances(const PointSet& a, const PointSet& b) {
  if (b.empty()) throw std::invalid_argument("nearest_distances: target set is empty");
  const Grid g = build_grid(b);
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& p : a.points) {
    const auto c = g.cell_of(p);
    double best = std::numeric_limits<double>::infinity();
    // Shell r holds the cells at Chebyshev distance r from the query cell;
    // anything in it is at least (r - 1) * cell away. Cells outside the
    // occupied box are skipped.
    long r0 = 0, far = 0;
    for (int a = 0; a < 3; ++a) {
      r0 = std::max(r0, std::max(-c[a], c[a] - g.max_index[a]));
      far = std::max(far, std::max(std::labs(c[a]), std::labs(c[a] - g.max_index[a])));
    }
    for (long r = r0; r <= far; ++r) {
      if (r > 0 && double(r - 1) * g.cell > best) break;
      const long i0 = std::max(c[0] - r, 0L), i1 = std::min(c[0] + r, g.max_index[0]);
      const long j0 = std::max(c[1] - r, 0L), j1 = std::min(c[1] + r, g.max_index[1]);
      const long k0 = std::max(c[2] - r, 0L), k1 = std::min(c[2] + r, g.max_index[2]);
      for (long i = i0; i <= i1; ++i)
        for (long j = j0; j <= j1; ++j)
          for (long k = k0; k <= k1; ++k) {
            if (std::max({std::labs(i - c[0]), std::labs(j - c[1]), std::labs(k - c[2])}) != r) continue;
            auto it = g.buckets.find(Grid::key(i, j, k));
            if (it == g.buckets.end()) continue;
            for (std::size_t q : it->second) best = std::min(best, distance(p, b.points[q]));
          }
    }
    out.push_back(best);
  }
  return out;
}

double mhd(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mhd: undefined for an empty point set");
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  return std::max(mean(nearest_distances(a, b)), mean(nearest_distances(b, a)));
}

double coverage(const PointSet& truth, const PointSet& pred, double radius_um) {
  if (truth.empty()) throw std::invalid_argument("coverage: ground-truth point set is empty");
  if (!(radius_um >= 0.0)) throw std::invalid_argument("coverage: radius must be >= 0");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (double d : nearest_distances(truth, pred)) hit += d <= radius_um;
  return double(hit) / double(truth.size());
}

double node_distance(const SkeletonGraph& a, const SkeletonGraph& b) {
  PointSet ka(a.key_points()), kb(b.key_points());
  if (ka.empty() || kb.empty()) {
    throw std::invalid_argument("node_distance: a graph has no endpoint or junction nodes");
  }
  return mhd(ka, kb);
}

}  // namespace vskel::metrics
