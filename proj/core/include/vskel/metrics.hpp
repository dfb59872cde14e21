#pragma once

#include <vector>

#include "vskel/graph.hpp"
#include "vskel/volume.hpp"

namespace vskel::metrics {

inline constexpr double kCoverageRadiusUm = 20.0;

/// Positions in micrometres; duplicates are removed on construction.
struct PointSet {
  std::vector<Point> points;

  PointSet() = default;
  explicit PointSet(std::vector<Point> pts);
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Centres of the nonzero voxels, scaled by the volume spacing.
PointSet points_of(const Volume& v);

/// 2|a ∩ b| / (|a| + |b|) over nonzero voxels; 1 when both are empty.
double dice_score(const Volume& a, const Volume& b);

/// Exact distance from each point of `a` to its nearest point of `b`,
/// found through a uniform grid over `b`.
std::vector<double> nearest_distances(const PointSet& a, const PointSet& b);

/// Modified Hausdorff distance: the larger of the two mean nearest-point
/// distances. Throws std::invalid_argument if either set is empty.
double mhd(const PointSet& a, const PointSet& b);

/// Fraction of `truth` points with a `pred` point within `radius_um`.
double coverage(const PointSet& truth, const PointSet& pred, double radius_um = kCoverageRadiusUm);

/// Stand-in "node distance": mhd over the positions of endpoint and junction
/// nodes (degree != 2) of the two graphs.
double node_distance(const SkeletonGraph& a, const SkeletonGraph& b);

}  // namespace vskel::metrics
