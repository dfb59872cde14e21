#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "vskel/volume.hpp"

namespace vskel {

using Point = std::array<double, 3>;  // micrometres, (x, y, z)
using Voxel = std::array<long, 3>;    // grid index, (x, y, z)

double distance(const Point& a, const Point& b);
double polyline_length(const std::vector<Point>& pts);
Point voxel_centre(const Voxel& v, const std::array<double, 3>& spacing);
Voxel nearest_voxel(const Point& p, const std::array<double, 3>& spacing);

/// Voxels of a 26-connected digital segment from a to b (both included).
std::vector<Voxel> digital_segment(const Voxel& a, const Voxel& b);

struct GraphNode {
  Point pos;
  std::vector<Voxel> voxels;  // grid support when derived from a voxel skeleton
};

struct GraphEdge {
  std::size_t a = 0, b = 0;
  std::vector<Point> polyline;  // from node a's side to node b's side
  double length_um = 0.0;       // arc length of the polyline
};

/// Node/edge form of a centreline network. A self-loop edge (a == b) counts
/// twice towards the node degree.
struct SkeletonGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  std::size_t add_node(const Point& p, std::vector<Voxel> voxels = {});
  std::size_t add_edge(std::size_t a, std::size_t b, std::vector<Point> polyline);

  std::vector<std::size_t> degrees() const;
  /// Component label per node; returns the number of components.
  std::size_t components(std::vector<std::size_t>* labels = nullptr) const;
  /// Positions of endpoints and junctions (degree != 2).
  std::vector<Point> key_points() const;
  double total_length() const;
};

/// Marks every polyline (26-connected segments between consecutive points)
/// and every node voxel / node position in `target`.
void rasterize(const SkeletonGraph& g, Volume& target);

/// SWC text: "id type x y z radius parent" per sample. Nodes are roots of
/// type 1; edge polylines are chains of type 3 hanging off their first node,
/// and "# link <sample> <node>" comments close each chain onto its second
/// node. Numbers use shortest round-trip formatting.
std::string to_swc(const SkeletonGraph& g);
SkeletonGraph from_swc(std::string_view text);

}  // namespace vskel
