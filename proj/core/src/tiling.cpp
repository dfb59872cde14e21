#include "vskel/tiling.hpp"

#include <cmath>
#include <stdexcept>

namespace vskel {

std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t tile, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    throw std::invalid_argument("tile overlap must lie in [0,1)");
  }
  if (tile == 0 || tile > extent) {
    throw std::invalid_argument("tile extent " + std::to_string(tile) +
                                " larger than volume extent " + std::to_string(extent));
  }
  const auto stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(tile) * (1.0 - overlap))));
  std::vector<std::size_t> out;
  std::size_t o = 0;
  while (true) {
    out.push_back(o);
    if (o + tile >= extent) break;
    o += stride;
    if (o + tile > extent) {
      out.push_back(extent - tile);
      break;
    }
  }
  return out;
}

std::vector<Index3> tile_origins(const Index3& volume_dims, const Index3& tile_dims,
                                 double overlap) {
  const auto ox = axis_origins(volume_dims[0], tile_dims[0], overlap);
  const auto oy = axis_origins(volume_dims[1], tile_dims[1], overlap);
  const auto oz = axis_origins(volume_dims[2], tile_dims[2], overlap);
  std::vector<Index3> out;
  for (auto z : oz)
    for (auto y : oy)
      for (auto x : ox) out.push_back({x, y, z});
  return out;
}

Volume crop(const Volume& v, const Index3& origin, const Index3& dims) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] + dims[a] > v.dims[a]) {
      throw std::out_of_range("crop box exceeds volume " + dims_str(v.dims));
    }
  }
  Volume out(dims, v.spacing, v.kind);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y) {
      const double* src = &v.data[v.index(origin[0], origin[1] + y, origin[2] + z)];
      std::copy(src, src + dims[0], &out.data[out.index(0, y, z)]);
    }
  return out;
}

Volume pad_to_multiple(const Volume& v, const Index3& multiple) {
  Index3 d;
  for (int a = 0; a < 3; ++a) {
    const std::size_t m = std::max<std::size_t>(1, multiple[a]);
    d[a] = (v.dims[a] + m - 1) / m * m;
  }
  if (d == v.dims) return v;
  Volume out(d, v.spacing, v.kind);
  for (std::size_t z = 0; z < v.nz(); ++z)
    for (std::size_t y = 0; y < v.ny(); ++y) {
      const double* src = &v.data[v.index(0, y, z)];
      std::copy(src, src + v.nx(), &out.data[out.index(0, y, z)]);
    }
  return out;
}

}  // namespace vskel
