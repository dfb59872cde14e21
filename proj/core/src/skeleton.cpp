#include "vskel/skeleton.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vskel/distance.hpp"

namespace vskel {

namespace {

using Mask = std::vector<std::uint8_t>;
using Dims = std::array<std::size_t, 3>;

struct Adjacency {
  std::vector<std::vector<int>> next;
};

// Components among the members of `set` (bit i = cell i) under `adj`;
// only components containing one of the `seeds` cells count when seeds != 0.
int count_components(std::uint32_t set, const Adjacency& adj, std::uint32_t seeds = 0) {
  int count = 0;
  std::uint32_t left = set;
  int stack[32];
  while (left) {
    const int start = __builtin_ctz(left);
    left &= ~(1u << start);
    bool touches = seeds == 0 || (seeds >> start & 1u);
    int top = 0;
    stack[top++] = start;
    while (top) {
      const int c = stack[--top];
      for (int n : adj.next[c]) {
        if (left >> n & 1u) {
          left &= ~(1u << n);
          touches = touches || (seeds >> n & 1u);
          stack[top++] = n;
        }
      }
    }
    count += touches;
  }
  return count;
}

struct Tables3 {
  Adjacency adj26, adj6;
  std::uint32_t n26 = 0, n18 = 0, n6 = 0;
  Tables3() {
    adj26.next.resize(27);
    adj6.next.resize(27);
    auto coord = [](int i) { return std::array<int, 3>{i % 3 - 1, i / 3 % 3 - 1, i / 9 - 1}; };
    for (int i = 0; i < 27; ++i) {
      if (i == 13) continue;
      const auto a = coord(i);
      const int l1 = std::abs(a[0]) + std::abs(a[1]) + std::abs(a[2]);
      n26 |= 1u << i;
      if (l1 <= 2) n18 |= 1u << i;
      if (l1 == 1) n6 |= 1u << i;
      for (int j = 0; j < 27; ++j) {
        if (j == i || j == 13) continue;
        const auto b = coord(j);
        const int dx = std::abs(a[0] - b[0]), dy = std::abs(a[1] - b[1]), dz = std::abs(a[2] - b[2]);
        if (std::max({dx, dy, dz}) == 1) adj26.next[i].push_back(j);
        if (dx + dy + dz == 1) adj6.next[i].push_back(j);
      }
    }
  }
};

struct Tables2 {
  Adjacency adj8, adj4;
  std::uint32_t n8 = 0, n4 = 0;
  Tables2() {
    adj8.next.resize(9);
    adj4.next.resize(9);
    for (int i = 0; i < 9; ++i) {
      if (i == 4) continue;
      const int ax = i % 3, ay = i / 3;
      n8 |= 1u << i;
      if (std::abs(ax - 1) + std::abs(ay - 1) == 1) n4 |= 1u << i;
      for (int j = 0; j < 9; ++j) {
        if (j == i || j == 4) continue;
        const int dx = std::abs(ax - j % 3), dy = std::abs(ay - j / 3);
        if (std::max(dx, dy) == 1) adj8.next[i].push_back(j);
        if (dx + dy == 1) adj4.next[i].push_back(j);
      }
    }
  }
};

const Tables3& tables3() {
  static const Tables3 t;
  return t;
}
const Tables2& tables2() {
  static const Tables2 t;
  return t;
}

Mask to_mask(const Volume& v) {
  Mask m(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v.data[i] != 0.0;
  return m;
}

Volume from_mask(const Mask& m, const Volume& like) {
  Volume out(like.dims, like.spacing, VolumeKind::Skeleton);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m[i];
  return out;
}

std::array<std::uint8_t, 27> cube_at(const Mask& m, const Dims& d, long x, long y, long z) {
  std::array<std::uint8_t, 27> c{};
  int i = 0;
  for (long dz = -1; dz <= 1; ++dz)
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx, ++i) {
        const long X = x + dx, Y = y + dy, Z = z + dz;
        if (X < 0 || Y < 0 || Z < 0 || X >= long(d[0]) || Y >= long(d[1]) || Z >= long(d[2])) continue;
        c[i] = m[(std::size_t(Z) * d[1] + std::size_t(Y)) * d[0] + std::size_t(X)];
      }
  return c;
}

int neighbour_count(const std::array<std::uint8_t, 27>& c) {
  int n = 0;
  for (int i = 0; i < 27; ++i) n += i != 13 && c[i];
  return n;
}

// Sequential layer peeling shared by the 2D and 3D variants. `cells` is the
// list of voxel indices the pass operates on; `border`, `simple` and
// `endpoint` are evaluated against the current mask.
template <class Border, class Simple, class Endpoint, class Less>
void peel(Mask& m, Less less, const std::vector<std::uint8_t>& ridge,
          const std::vector<std::size_t>& cells, Border border, Simple simple, Endpoint endpoint) {
  std::vector<std::size_t> cand;
  for (;;) {
    cand.clear();
    for (std::size_t i : cells)
      if (m[i] && border(i)) cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(), less);
    bool changed = false;
    for (std::size_t i : cand) {
      if (ridge[i] && endpoint(i)) continue;
      if (simple(i)) {
        m[i] = 0;
        changed = true;
      }
    }
    if (!changed) return;
  }
}

}  // namespace

bool is_simple_3d(const std::array<std::uint8_t, 27>& cube) {
  const auto& t = tables3();
  std::uint32_t fg = 0, bg = 0;
  for (int i = 0; i < 27; ++i) {
    if (i == 13) continue;
    if (cube[i]) {
      fg |= 1u << i;
    } else if (t.n18 >> i & 1u) {
      bg |= 1u << i;
    }
  }
  if (fg == 0 || count_components(fg, t.adj26) != 1) return false;
  return count_components(bg, t.adj6, t.n6) == 1;
}

bool is_simple_2d(const std::array<std::uint8_t, 9>& ring) {
  const auto& t = tables2();
  std::uint32_t fg = 0, bg = 0;
  for (int i = 0; i < 9; ++i) {
    if (i == 4) continue;
    (ring[i] ? fg : bg) |= 1u << i;
  }
  if (fg == 0 || count_components(fg, t.adj8) != 1) return false;
  return count_components(bg, t.adj4, t.n4) == 1;
}

Volume thin(const Volume& mask) {
  const Dims d = mask.dims;
  Mask m = to_mask(mask);
  // Ordering key: 3D distance, then in-plane distance. The second key matters
  // for structures only a slice or two thick, where the 3D distance is flat.
  const auto dt = distance_transform_sq_voxels(m, d, false);
  std::vector<double> dt2(m.size());
  const std::size_t plane = d[0] * d[1];
  for (std::size_t z = 0; z < d[2]; ++z) {
    const Mask slice(m.begin() + z * plane, m.begin() + (z + 1) * plane);
    const auto s2 = distance_transform_sq_voxels(slice, {d[0], d[1], 1}, false);
    std::copy(s2.begin(), s2.end(), dt2.begin() + z * plane);
  }
  auto less = [&](std::size_t a, std::size_t b) {
    return dt[a] < dt[b] || (dt[a] == dt[b] && dt2[a] < dt2[b]);
  };
  std::vector<std::uint8_t> ridge(m.size(), 0);
  std::vector<std::size_t> cells;
  auto coords = [&](std::size_t i) {
    return std::array<long, 3>{long(i % d[0]), long(i / d[0] % d[1]), long(i / (d[0] * d[1]))};
  };
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    cells.push_back(i);
    const auto [x, y, z] = coords(i);
    bool top = true;
    for (long dz = -1; dz <= 1 && top; ++dz)
      for (long dy = -1; dy <= 1 && top; ++dy)
        for (long dx = -1; dx <= 1 && top; ++dx) {
          if (!mask.contains(x + dx, y + dy, z + dz)) continue;
          const std::size_t j = mask.index(x + dx, y + dy, z + dz);
          if (m[j] && less(i, j)) top = false;
        }
    ridge[i] = top;
  }
  auto border = [&](std::size_t i) {
    const auto [x, y, z] = coords(i);
    static constexpr long off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (const auto& o : off) {
      if (!mask.contains(x + o[0], y + o[1], z + o[2])) return true;
      if (!m[mask.index(x + o[0], y + o[1], z + o[2])]) return true;
    }
    return false;
  };
  auto simple = [&](std::size_t i) {
    const auto [x, y, z] = coords(i);
    return is_simple_3d(cube_at(m, d, x, y, z));
  };
  auto endpoint = [&](std::size_t i) {
    const auto [x, y, z] = coords(i);
    return neighbour_count(cube_at(m, d, x, y, z)) == 1;
  };
  peel(m, less, ridge, cells, border, simple, endpoint);
  return from_mask(m, mask);
}

Volume thin2d(const Volume& mask) {
  const std::size_t nx = mask.nx(), ny = mask.ny(), plane = nx * ny;
  Mask all = to_mask(mask);
  for (std::size_t z = 0; z < mask.nz(); ++z) {
    Mask m(all.begin() + z * plane, all.begin() + (z + 1) * plane);
    const auto dt = distance_transform_sq_voxels(m, {nx, ny, 1}, false);
    auto at = [&](long x, long y) -> std::uint8_t {
      if (x < 0 || y < 0 || x >= long(nx) || y >= long(ny)) return 0;
      return m[std::size_t(y) * nx + std::size_t(x)];
    };
    auto ring = [&](std::size_t i) {
      std::array<std::uint8_t, 9> r{};
      const long x = long(i % nx), y = long(i / nx);
      for (int k = 0; k < 9; ++k) r[k] = at(x + k % 3 - 1, y + k / 3 - 1);
      return r;
    };
    std::vector<std::uint8_t> ridge(plane, 0);
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!m[i]) continue;
      cells.push_back(i);
      const long x = long(i % nx), y = long(i / nx);
      bool top = true;
      for (int k = 0; k < 9; ++k) {
        const long X = x + k % 3 - 1, Y = y + k / 3 - 1;
        if (at(X, Y) && dt[std::size_t(Y) * nx + std::size_t(X)] > dt[i]) top = false;
      }
      ridge[i] = top;
    }
    auto border = [&](std::size_t i) {
      const long x = long(i % nx), y = long(i / nx);
      return !at(x - 1, y) || !at(x + 1, y) || !at(x, y - 1) || !at(x, y + 1);
    };
    auto simple = [&](std::size_t i) { return is_simple_2d(ring(i)); };
    auto endpoint = [&](std::size_t i) {
      const auto r = ring(i);
      int n = 0;
      for (int k = 0; k < 9; ++k) n += k != 4 && r[k];
      return n == 1;
    };
    peel(m, [&](std::size_t a, std::size_t b) { return dt[a] < dt[b]; }, ridge, cells, border,
         simple, endpoint);
    std::copy(m.begin(), m.end(), all.begin() + z * plane);
  }
  return from_mask(all, mask);
}

namespace {

// First voxel of a 2x2 planar block that holds a simple voxel, or -1.
long find_thick_block(const Mask& m, const Dims& d) {
  static constexpr long planes[3][2][3] = {
      {{1, 0, 0}, {0, 1, 0}}, {{1, 0, 0}, {0, 0, 1}}, {{0, 1, 0}, {0, 0, 1}}};
  auto in = [&](long x, long y, long z) {
    return x >= 0 && y >= 0 && z >= 0 && x < long(d[0]) && y < long(d[1]) && z < long(d[2]) &&
           m[(std::size_t(z) * d[1] + std::size_t(y)) * d[0] + std::size_t(x)];
  };
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const long x = long(i % d[0]), y = long(i / d[0] % d[1]), z = long(i / (d[0] * d[1]));
    for (const auto& p : planes) {
      const long c[4][3] = {{x, y, z},
                            {x + p[0][0], y + p[0][1], z + p[0][2]},
                            {x + p[1][0], y + p[1][1], z + p[1][2]},
                            {x + p[0][0] + p[1][0], y + p[0][1] + p[1][1], z + p[0][2] + p[1][2]}};
      bool full = true;
      for (const auto& v : c) full = full && in(v[0], v[1], v[2]);
      if (!full) continue;
      for (const auto& v : c)
        if (is_simple_3d(cube_at(m, d, v[0], v[1], v[2]))) return long(i);
    }
  }
  return -1;
}

}  // namespace

bool is_unit_width(const Volume& skeleton) {
  return find_thick_block(to_mask(skeleton), skeleton.dims) < 0;
}

SkeletonGraph to_graph(const Volume& skeleton) {
  const Dims d = skeleton.dims;
  const Mask m = to_mask(skeleton);
  if (const long bad = find_thick_block(m, d); bad >= 0) {
    const std::size_t i = std::size_t(bad);
    throw std::invalid_argument("to_graph: skeleton is not unit-width near voxel (" +
                                std::to_string(i % d[0]) + "," + std::to_string(i / d[0] % d[1]) +
                                "," + std::to_string(i / (d[0] * d[1])) + "); thin it first");
  }
  auto voxel_of = [&](std::size_t i) {
    return Voxel{long(i % d[0]), long(i / d[0] % d[1]), long(i / (d[0] * d[1]))};
  };
  auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    const auto v = voxel_of(i);
    for (long dz = -1; dz <= 1; ++dz)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy && !dz) continue;
          if (!skeleton.contains(v[0] + dx, v[1] + dy, v[2] + dz)) continue;
          const std::size_t j = skeleton.index(v[0] + dx, v[1] + dy, v[2] + dz);
          if (m[j]) out.push_back(j);
        }
    return out;
  };
  const std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> node_of(m.size(), none);
  std::vector<std::uint8_t> is_node(m.size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] && neighbours(i).size() != 2) is_node[i] = 1;

  SkeletonGraph g;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!is_node[i] || node_of[i] != none) continue;
    const std::size_t id = g.add_node({0, 0, 0});
    std::vector<std::size_t> stack{i};
    node_of[i] = id;
    std::vector<std::size_t> members;
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      members.push_back(c);
      for (std::size_t n : neighbours(c))
        if (is_node[n] && node_of[n] == none) {
          node_of[n] = id;
          stack.push_back(n);
        }
    }
    std::sort(members.begin(), members.end());
    Point mean{0, 0, 0};
    for (std::size_t c : members) {
      const auto p = voxel_centre(voxel_of(c), skeleton.spacing);
      g.nodes[id].voxels.push_back(voxel_of(c));
      for (int a = 0; a < 3; ++a) mean[a] += p[a];
    }
    for (int a = 0; a < 3; ++a) mean[a] /= double(members.size());
    g.nodes[id].pos = mean;
  }

  std::vector<std::uint8_t> visited(m.size(), 0);
  auto centre = [&](std::size_t i) { return voxel_centre(voxel_of(i), skeleton.spacing); };
  auto other = [&](std::size_t cur, std::size_t prev) {
    const auto nb = neighbours(cur);
    return nb[0] == prev ? nb[1] : nb[0];
  };
  for (std::size_t u = 0; u < m.size(); ++u) {
    if (!is_node[u]) continue;
    for (std::size_t c : neighbours(u)) {
      if (is_node[c] || visited[c]) continue;
      std::vector<Point> poly{centre(u)};
      std::size_t prev = u, cur = c;
      while (!is_node[cur]) {
        visited[cur] = 1;
        poly.push_back(centre(cur));
        const std::size_t next = other(cur, prev);
        prev = cur;
        cur = next;
      }
      poly.push_back(centre(cur));
      g.add_edge(node_of[u], node_of[cur], std::move(poly));
    }
  }
  // cycles with no node voxel
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (!m[s] || is_node[s] || visited[s]) continue;
    const std::size_t id = g.add_node(centre(s), {voxel_of(s)});
    visited[s] = 1;
    std::vector<Point> poly{centre(s)};
    std::size_t prev = s, cur = neighbours(s)[0];
    while (cur != s) {
      visited[cur] = 1;
      poly.push_back(centre(cur));
      const std::size_t next = other(cur, prev);
      prev = cur;
      cur = next;
    }
    poly.push_back(centre(s));
    g.add_edge(id, id, std::move(poly));
  }
  return g;
}

namespace {

std::vector<std::size_t> by_length(const SkeletonGraph& g, const std::vector<std::uint8_t>& alive) {
  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (alive[e]) order.push_back(e);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return g.edges[a].length_um < g.edges[b].length_um;
  });
  return order;
}

// Endpoint node of a removable terminal edge, or -1.
long spur_tip(const GraphEdge& e, const std::vector<std::size_t>& deg, double min_len) {
  if (e.a == e.b || !(e.length_um < min_len)) return -1;
  if (deg[e.a] == 1 && deg[e.b] >= 3) return long(e.a);
  if (deg[e.b] == 1 && deg[e.a] >= 3) return long(e.b);
  return -1;
}

}  // namespace

Volume prune(const Volume& skeleton, double min_branch_um) {
  if (min_branch_um < 0) throw std::invalid_argument("prune: min_branch_um must be >= 0");
  Volume out = skeleton;
  out.kind = VolumeKind::Skeleton;
  for (double& v : out.data) v = v != 0.0 ? 1.0 : 0.0;
  if (min_branch_um == 0) return out;
  for (;;) {
    const SkeletonGraph g = to_graph(out);
    auto deg = g.degrees();
    std::vector<std::uint8_t> alive(g.edges.size(), 1);
    bool removed = false;
    for (std::size_t ei : by_length(g, alive)) {
      const auto& e = g.edges[ei];
      const long tip = spur_tip(e, deg, min_branch_um);
      if (tip < 0) continue;
      for (std::size_t k = 1; k + 1 < e.polyline.size(); ++k) {
        const Voxel v = nearest_voxel(e.polyline[k], out.spacing);
        out.at(v[0], v[1], v[2]) = 0.0;
      }
      for (const auto& v : g.nodes[std::size_t(tip)].voxels) out.at(v[0], v[1], v[2]) = 0.0;
      // the junction voxel the branch hung from goes too if that keeps topology
      const std::size_t root = e.a == std::size_t(tip) ? e.b : e.a;
      const Voxel j = nearest_voxel(e.a == root ? e.polyline.front() : e.polyline.back(), out.spacing);
      if (g.nodes[root].voxels.size() > 1) {
        const Mask now = to_mask(out);
        const auto cube = cube_at(now, out.dims, j[0], j[1], j[2]);
        if (neighbour_count(cube) >= 2 && is_simple_3d(cube)) out.at(j[0], j[1], j[2]) = 0.0;
      }
      --deg[e.a];
      --deg[e.b];
      removed = true;
    }
    if (!removed) return out;
  }
}

SkeletonGraph prune(const SkeletonGraph& graph, double min_branch_um) {
  if (min_branch_um < 0) throw std::invalid_argument("prune: min_branch_um must be >= 0");
  SkeletonGraph g = graph;
  std::vector<std::uint8_t> edge_alive(g.edges.size(), 1), node_alive(g.nodes.size(), 1);
  auto degrees = [&] {
    std::vector<std::size_t> d(g.nodes.size(), 0);
    for (std::size_t e = 0; e < g.edges.size(); ++e)
      if (edge_alive[e]) {
        ++d[g.edges[e].a];
        ++d[g.edges[e].b];
      }
    return d;
  };
  for (;;) {
    auto deg = degrees();
    std::vector<std::size_t> touched;
    for (std::size_t ei : by_length(g, edge_alive)) {
      const auto e = g.edges[ei];
      const long tip = spur_tip(e, deg, min_branch_um);
      if (tip < 0) continue;
      edge_alive[ei] = 0;
      node_alive[std::size_t(tip)] = 0;
      --deg[e.a];
      --deg[e.b];
      touched.push_back(e.a == std::size_t(tip) ? e.b : e.a);
    }
    if (touched.empty()) break;
    // junctions left with two branches are joined into one edge
    for (std::size_t n : touched) {
      if (!node_alive[n] || deg[n] != 2) continue;
      std::vector<std::size_t> inc;
      for (std::size_t e = 0; e < g.edges.size(); ++e)
        if (edge_alive[e] && (g.edges[e].a == n || g.edges[e].b == n)) inc.push_back(e);
      if (inc.size() != 2) continue;  // a self-loop
      GraphEdge e1 = g.edges[inc[0]], e2 = g.edges[inc[1]];
      if (e1.b != n) {
        std::reverse(e1.polyline.begin(), e1.polyline.end());
        std::swap(e1.a, e1.b);
      }
      if (e2.a != n) {
        std::reverse(e2.polyline.begin(), e2.polyline.end());
        std::swap(e2.a, e2.b);
      }
      std::vector<Point> poly = e1.polyline;
      auto from = e2.polyline.begin();
      if (!poly.empty() && from != e2.polyline.end() && poly.back() == *from) ++from;
      poly.insert(poly.end(), from, e2.polyline.end());
      edge_alive[inc[0]] = edge_alive[inc[1]] = 0;
      node_alive[n] = 0;
      g.add_edge(e1.a, e2.b, std::move(poly));
      edge_alive.push_back(1);
    }
  }
  SkeletonGraph out;
  std::vector<std::size_t> remap(g.nodes.size(), 0);
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (node_alive[i]) remap[i] = out.add_node(g.nodes[i].pos, g.nodes[i].voxels);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (edge_alive[e]) out.add_edge(remap[g.edges[e].a], remap[g.edges[e].b], g.edges[e].polyline);
  return out;
}

Volume binarize_and_skeletonize(const Volume& prediction, double threshold, double min_branch_um) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("binarize_and_skeletonize: threshold must lie in (0, 1)");
  }
  Volume bin(prediction.dims, prediction.spacing, VolumeKind::Mask);
  for (std::size_t i = 0; i < bin.size(); ++i) bin.data[i] = prediction.data[i] >= threshold;
  return prune(thin(bin), min_branch_um);
}

}  // namespace vskel
