#pragma once

#include "vskel/volume.hpp"

namespace vskel {

/// Exact anisotropic Euclidean distance (micrometres) from every voxel centre
/// to the nearest voxel whose mask value is nonzero (`to_foreground`) or zero.
/// Voxels of the target class get 0. Returns +inf everywhere if the target
/// class is absent.
///
/// Squared distances accumulate per axis in the order x, y, z, each term
/// computed as (d * s) * (d * s).
Volume distance_transform(const Volume& mask, bool to_foreground);

/// Squared-distance variant in voxel units on an isotropic grid, used for
/// ordering in thinning.
std::vector<double> distance_transform_sq_voxels(const std::vector<std::uint8_t>& fg,
                                                 const std::array<std::size_t, 3>& dims,
                                                 bool to_foreground);

}  // namespace vskel
