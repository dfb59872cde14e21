#pragma once

#include <array>
#include <cstdint>

#include "vskel/graph.hpp"
#include "vskel/volume.hpp"

namespace vskel {

inline constexpr double kDefaultMinBranchUm = 10.0;

/// Simple-point test for the (26, 6) connectivity pair. `cube` holds the
/// 3x3x3 neighbourhood in (z, y, x) order; the centre (index 13) is ignored.
bool is_simple_3d(const std::array<std::uint8_t, 27>& cube);

/// Simple-point test for the (8, 4) pair; `ring` is the 3x3 block in (y, x)
/// order, centre at index 4 ignored.
bool is_simple_2d(const std::array<std::uint8_t, 9>& ring);

/// Homotopic curve thinning. Border voxels are peeled layer by layer in
/// ascending distance-to-background order, ties broken by in-plane distance
/// and then scan order. An
/// endpoint that sits on a local maximum of the original distance map is
/// kept, which is what leaves curves rather than points. Anisotropy is
/// ignored here.
Volume thin(const Volume& mask);

/// Per-slice 2D version of thin() with (8, 4) connectivity.
Volume thin2d(const Volume& mask);

/// True when no 2x2 planar block of the skeleton contains a simple voxel.
bool is_unit_width(const Volume& skeleton);

/// Nodes are clusters of skeleton voxels whose 26-neighbour count differs
/// from 2; the chains between them become edges whose polylines run through
/// voxel centres from one node voxel to the other. A cycle without such
/// voxels gets one anchor node (its first voxel in scan order) and a
/// self-edge. Throws std::invalid_argument when the input is not unit-width.
SkeletonGraph to_graph(const Volume& skeleton);

/// Repeatedly removes the shortest terminal branch (endpoint to junction)
/// below `min_branch_um` micrometres. A path between two endpoints is never
/// removed, so every component keeps at least its last path. The volume
/// overload also drops the junction voxel a branch hung from when it is
/// simple afterwards.
Volume prune(const Volume& skeleton, double min_branch_um = kDefaultMinBranchUm);
SkeletonGraph prune(const SkeletonGraph& graph, double min_branch_um = kDefaultMinBranchUm);

/// prediction >= threshold, then thin, then prune.
Volume binarize_and_skeletonize(const Volume& prediction, double threshold,
                                double min_branch_um = kDefaultMinBranchUm);

}  // namespace vskel
