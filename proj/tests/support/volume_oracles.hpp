#pragma once

// Brute-force references over library volumes and point sets. Each one works
// from the definition and shares no code with the library beyond the Volume
// container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "vskel/graph.hpp"
#include "vskel/volume.hpp"

namespace oracle {

using vskel::Volume;

// All-pairs Euclidean distance to the nearest foreground (or background)
// voxel in micrometres; squared terms added in x, y, z order.
inline Volume brute_distance(const Volume& m, bool to_fg) {
  Volume out(m.dims, m.spacing, vskel::VolumeKind::Intensity);
  const auto& s = m.spacing;
  for (std::size_t z = 0; z < m.nz(); ++z)
    for (std::size_t y = 0; y < m.ny(); ++y)
      for (std::size_t x = 0; x < m.nx(); ++x) {
        double best = INFINITY;
        for (std::size_t k = 0; k < m.nz(); ++k)
          for (std::size_t j = 0; j < m.ny(); ++j)
            for (std::size_t i = 0; i < m.nx(); ++i) {
              if ((m.at(i, j, k) != 0.0) != to_fg) continue;
              const double dx = (double(i) - double(x)) * s[0];
              const double dy = (double(j) - double(y)) * s[1];
              const double dz = (double(k) - double(z)) * s[2];
              best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
        out.at(x, y, z) = std::sqrt(best);
      }
  return out;
}

inline Volume random_mask(std::array<std::size_t, 3> d, unsigned seed, double p) {
  Volume m(d, vskel::kDefaultSpacing, vskel::VolumeKind::Mask);
  auto r = random_vector(m.size(), seed, 0.0, 1.0);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r[i] < p ? 1.0 : 0.0;
  return m;
}

inline double point_distance(const vskel::Point& p, const vskel::Point& q) {
  const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline std::vector<double> brute_nearest(const std::vector<vskel::Point>& a,
                                         const std::vector<vskel::Point>& b) {
  std::vector<double> out;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, point_distance(p, q));
    out.push_back(best);
  }
  return out;
}

inline double brute_mhd(const std::vector<vskel::Point>& a, const std::vector<vskel::Point>& b) {
  auto mean = [](std::vector<double> v) {
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  return std::max(mean(brute_nearest(a, b)), mean(brute_nearest(b, a)));
}

// Flood-fill component count. Foreground uses 26-adjacency; background uses
// 6-adjacency on a grid padded by one voxel so the outside is one component.
inline std::size_t components(const Volume& v, bool foreground) {
  const long pad = foreground ? 0 : 1;
  const long nx = long(v.nx()) + 2 * pad, ny = long(v.ny()) + 2 * pad, nz = long(v.nz()) + 2 * pad;
  auto member = [&](long x, long y, long z) {
    const long X = x - pad, Y = y - pad, Z = z - pad;
    const bool fg = v.contains(X, Y, Z) && v.at(X, Y, Z) != 0.0;
    return fg == foreground;
  };
  std::vector<std::uint8_t> seen(std::size_t(nx * ny * nz), 0);
  auto id = [&](long x, long y, long z) { return std::size_t((z * ny + y) * nx + x); };
  std::size_t count = 0;
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        if (!member(x, y, z) || seen[id(x, y, z)]) continue;
        ++count;
        std::vector<std::array<long, 3>> stack{{x, y, z}};
        seen[id(x, y, z)] = 1;
        while (!stack.empty()) {
          auto [a, b, c] = stack.back();
          stack.pop_back();
          for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
              for (long dx = -1; dx <= 1; ++dx) {
                const long l1 = std::labs(dx) + std::labs(dy) + std::labs(dz);
                if (l1 == 0 || (!foreground && l1 != 1)) continue;
                const long X = a + dx, Y = b + dy, Z = c + dz;
                if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz) continue;
                if (!member(X, Y, Z) || seen[id(X, Y, Z)]) continue;
                seen[id(X, Y, Z)] = 1;
                stack.push_back({X, Y, Z});
              }
        }
      }
  return count;
}

// (26, 6) simple voxel from the definition: one 26-component of foreground in
// the punctured 26-neighbourhood, and one 6-component of background in the
// punctured 18-neighbourhood among those 6-adjacent to the centre.
// cube[(dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)].
inline bool simple_26_6(const std::array<std::uint8_t, 27>& cube) {
  auto off = [](int i) { return std::array<int, 3>{i % 3 - 1, (i / 3) % 3 - 1, i / 9 - 1}; };
  auto l1 = [&](int i) {
    auto o = off(i);
    return std::abs(o[0]) + std::abs(o[1]) + std::abs(o[2]);
  };
  auto count = [&](bool fg) {
    std::array<int, 27> label{};
    int n = 0;
    for (int s = 0; s < 27; ++s) {
      if (s == 13 || (cube[s] != 0) != fg || label[s]) continue;
      if (!fg && l1(s) != 1) continue;  // seed only at face neighbours
      ++n;
      std::vector<int> stack{s};
      label[s] = n;
      while (!stack.empty()) {
        const int c = stack.back();
        stack.pop_back();
        for (int t = 0; t < 27; ++t) {
          if (t == 13 || label[t] || (cube[t] != 0) != fg) continue;
          if (!fg && l1(t) == 3) continue;  // 18-neighbourhood only
          auto a = off(c), b = off(t);
          const int d = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
          const int m = std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
          if (fg ? m == 1 : d == 1) {
            label[t] = n;
            stack.push_back(t);
          }
        }
      }
    }
    return n;
  };
  return count(true) == 1 && count(false) == 1;
}

// Unit width: no 2x2 block in any axis-aligned plane whose four voxels are all
// set while one of them is simple.
inline bool unit_width(const Volume& v) {
  auto on = [&](long x, long y, long z) { return v.contains(x, y, z) && v.at(x, y, z) != 0.0; };
  auto simple_at = [&](long x, long y, long z) {
    std::array<std::uint8_t, 27> c{};
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) c[(dz + 1) * 9 + (dy + 1) * 3 + dx + 1] = on(x + dx, y + dy, z + dz);
    return simple_26_6(c);
  };
  const std::array<std::array<std::array<long, 3>, 2>, 3> planes{{
      {{{1, 0, 0}, {0, 1, 0}}}, {{{1, 0, 0}, {0, 0, 1}}}, {{{0, 1, 0}, {0, 0, 1}}}}};
  for (long z = 0; z < long(v.nz()); ++z)
    for (long y = 0; y < long(v.ny()); ++y)
      for (long x = 0; x < long(v.nx()); ++x) {
        if (!on(x, y, z)) continue;
        for (const auto& pl : planes) {
          const auto& u = pl[0];
          const auto& w = pl[1];
          const std::array<std::array<long, 3>, 4> q{{{x, y, z},
                                                      {x + u[0], y + u[1], z + u[2]},
                                                      {x + w[0], y + w[1], z + w[2]},
                                                      {x + u[0] + w[0], y + u[1] + w[1], z + u[2] + w[2]}}};
          bool all = true;
          for (const auto& p : q) all = all && on(p[0], p[1], p[2]);
          if (!all) continue;
          for (const auto& p : q)
            if (simple_at(p[0], p[1], p[2])) return false;
        }
      }
  return true;
}

}  // namespace oracle
