#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "vskel/volume.hpp"

namespace vskel {

using Index3 = std::array<std::size_t, 3>;

/// Origins of a regular tile grid along one axis: stride = floor(tile *
/// (1 - overlap)) (at least 1), with the last tile clamped to the border.
std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t tile, double overlap);

/// Tile origins over a volume in z, y, x order (x fastest).
std::vector<Index3> tile_origins(const Index3& volume_dims, const Index3& tile_dims,
                                 double overlap);

/// Copies the box [origin, origin + dims) out of `v`.
Volume crop(const Volume& v, const Index3& origin, const Index3& dims);

/// Zero-pads (at the high end of each axis) up to the next multiples.
Volume pad_to_multiple(const Volume& v, const Index3& multiple);

}  // namespace vskel
