#include "vskel/graph.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vskel {

double distance(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double polyline_length(const std::vector<Point>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  return len;
}

Point voxel_centre(const Voxel& v, const std::array<double, 3>& s) {
  return {static_cast<double>(v[0]) * s[0], static_cast<double>(v[1]) * s[1],
          static_cast<double>(v[2]) * s[2]};
}

Voxel nearest_voxel(const Point& p, const std::array<double, 3>& s) {
  return {std::lround(p[0] / s[0]), std::lround(p[1] / s[1]), std::lround(p[2] / s[2])};
}

std::vector<Voxel> digital_segment(const Voxel& a, const Voxel& b) {
  const long dx = b[0] - a[0], dy = b[1] - a[1], dz = b[2] - a[2];
  const long n = std::max({std::labs(dx), std::labs(dy), std::labs(dz)});
  std::vector<Voxel> out;
  out.reserve(n + 1);
  for (long t = 0; t <= n; ++t) {
    if (n == 0) {
      out.push_back(a);
      break;
    }
    // integer rounding of a + d * t / n, half away from zero
    auto step = [&](long base, long d) {
      const long num = 2 * d * t + (d >= 0 ? n : -n);
      return base + num / (2 * n);
    };
    out.push_back({step(a[0], dx), step(a[1], dy), step(a[2], dz)});
  }
  return out;
}

std::size_t SkeletonGraph::add_node(const Point& p, std::vector<Voxel> voxels) {
  nodes.push_back({p, std::move(voxels)});
  return nodes.size() - 1;
}

std::size_t SkeletonGraph::add_edge(std::size_t a, std::size_t b, std::vector<Point> polyline) {
  if (a >= nodes.size() || b >= nodes.size()) throw std::out_of_range("edge endpoint out of range");
  GraphEdge e;
  e.a = a;
  e.b = b;
  e.length_um = polyline_length(polyline);
  e.polyline = std::move(polyline);
  edges.push_back(std::move(e));
  return edges.size() - 1;
}

std::vector<std::size_t> SkeletonGraph::degrees() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  for (const auto& e : edges) {
    ++d[e.a];
    ++d[e.b];
  }
  return d;
}

std::size_t SkeletonGraph::components(std::vector<std::size_t>* labels) const {
  std::vector<std::size_t> parent(nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : edges) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::map<std::size_t, std::size_t> ids;
  std::vector<std::size_t> lab(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto r = find(i);
    auto it = ids.emplace(r, ids.size()).first;
    lab[i] = it->second;
  }
  if (labels) *labels = std::move(lab);
  return ids.size();
}

std::vector<Point> SkeletonGraph::key_points() const {
  const auto d = degrees();
  std::vector<Point> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (d[i] != 2) out.push_back(nodes[i].pos);
  return out;
}

double SkeletonGraph::total_length() const {
  double s = 0.0;
  for (const auto& e : edges) s += e.length_um;
  return s;
}

void rasterize(const SkeletonGraph& g, Volume& target) {
  auto mark = [&](const Voxel& v) {
    if (target.contains(v[0], v[1], v[2])) target.at(v[0], v[1], v[2]) = 1.0;
  };
  for (const auto& n : g.nodes) {
    if (n.voxels.empty()) {
      mark(nearest_voxel(n.pos, target.spacing));
    } else {
      for (const auto& v : n.voxels) mark(v);
    }
  }
  for (const auto& e : g.edges) {
    if (e.polyline.empty()) continue;
    Voxel prev = nearest_voxel(e.polyline.front(), target.spacing);
    mark(prev);
    for (std::size_t i = 1; i < e.polyline.size(); ++i) {
      const Voxel cur = nearest_voxel(e.polyline[i], target.spacing);
      for (const auto& v : digital_segment(prev, cur)) mark(v);
      prev = cur;
    }
  }
}

// ---- SWC -------------------------------------------------------------------------

namespace {

void put_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

void put_int(std::string& out, long v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

void put_sample(std::string& out, long id, int type, const Point& p, long parent) {
  put_int(out, id);
  out += ' ';
  put_int(out, type);
  for (double c : p) {
    out += ' ';
    put_number(out, c);
  }
  out += " 1 ";
  put_int(out, parent);
  out += '\n';
}

template <class T>
T parse_field(std::string_view tok, std::size_t line_no) {
  T v{};
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw std::runtime_error("swc line " + std::to_string(line_no) + ": cannot parse '" +
                             std::string(tok) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t j = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

}  // namespace

std::string to_swc(const SkeletonGraph& g) {
  std::string out = "# vskel skeleton graph\n";
  long id = 0;
  for (const auto& n : g.nodes) put_sample(out, ++id, 1, n.pos, -1);
  for (const auto& e : g.edges) {
    long parent = static_cast<long>(e.a) + 1;
    for (const auto& p : e.polyline) {
      put_sample(out, ++id, 3, p, parent);
      parent = id;
    }
    out += "# link ";
    put_int(out, parent);
    out += ' ';
    put_int(out, static_cast<long>(e.b) + 1);
    out += '\n';
  }
  return out;
}

SkeletonGraph from_swc(std::string_view text) {
  struct Sample {
    int type;
    Point p;
    long parent;
  };
  std::map<long, Sample> samples;
  std::vector<std::pair<long, long>> links;
  std::vector<long> order;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0].front() == '#') {
      if (tok.size() == 4 && tok[0] == "#" && tok[1] == "link") {
        links.emplace_back(parse_field<long>(tok[2], line_no), parse_field<long>(tok[3], line_no));
      }
      continue;
    }
    if (tok.size() != 7) {
      throw std::runtime_error("swc line " + std::to_string(line_no) + ": expected 7 fields");
    }
    Sample s{parse_field<int>(tok[1], line_no),
             {parse_field<double>(tok[2], line_no), parse_field<double>(tok[3], line_no),
              parse_field<double>(tok[4], line_no)},
             parse_field<long>(tok[6], line_no)};
    const long id = parse_field<long>(tok[0], line_no);
    if (!samples.emplace(id, s).second) {
      throw std::runtime_error("swc line " + std::to_string(line_no) + ": duplicate id");
    }
    order.push_back(id);
  }

  SkeletonGraph g;
  std::map<long, std::size_t> node_of;
  for (long id : order) {
    const auto& s = samples.at(id);
    if (s.type == 1) node_of[id] = g.add_node(s.p);
  }
  std::map<long, long> link_of(links.begin(), links.end());
  // Walk each chain from its first sample (parent is a node) to its link.
  std::map<long, std::vector<long>> children;
  for (long id : order) {
    const auto& s = samples.at(id);
    if (s.type != 1) children[s.parent].push_back(id);
  }
  for (long id : order) {
    const auto& s = samples.at(id);
    if (s.type == 1 || !node_of.count(s.parent)) continue;
    std::vector<Point> poly;
    long cur = id;
    while (true) {
      poly.push_back(samples.at(cur).p);
      auto l = link_of.find(cur);
      if (l != link_of.end()) {
        auto nb = node_of.find(l->second);
        if (nb == node_of.end()) throw std::runtime_error("swc link to unknown node");
        g.add_edge(node_of.at(s.parent), nb->second, std::move(poly));
        break;
      }
      auto ch = children.find(cur);
      if (ch == children.end() || ch->second.size() != 1) {
        throw std::runtime_error("swc chain starting at sample " + std::to_string(id) +
                                 " is not closed by a link");
      }
      cur = ch->second.front();
    }
  }
  return g;
}

}  // namespace vskel
