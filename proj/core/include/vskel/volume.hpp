#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vskel {

enum class VolumeKind : std::uint8_t { Intensity, Mask, Skeleton };

inline constexpr std::array<double, 3> kDefaultSpacing{0.83, 0.83, 5.0};

/// Scalar grid with physical voxel spacing. Axes are (x, y, z); storage is
/// z-major, then y, with x fastest. Voxel (i, j, k) has its centre at
/// (i * sx, j * sy, k * sz) micrometres.
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing = kDefaultSpacing;
  VolumeKind kind = VolumeKind::Intensity;
  std::vector<double> data;

  Volume() = default;
  Volume(std::array<std::size_t, 3> d, std::array<double, 3> s, VolumeKind k, double fill = 0.0)
      : dims(d), spacing(s), kind(k), data(d[0] * d[1] * d[2], fill) {}

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * dims[1] + y) * dims[0] + x;
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }
  bool contains(long x, long y, long z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < long(dims[0]) && y < long(dims[1]) &&
           z < long(dims[2]);
  }
  bool binary() const { return kind != VolumeKind::Intensity; }
  std::size_t count_nonzero() const {
    std::size_t n = 0;
    for (double v : data) n += v != 0.0;
    return n;
  }
};

inline std::string dims_str(const std::array<std::size_t, 3>& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

inline void require_same_dims(const Volume& a, const Volume& b, const char* what) {
  if (a.dims != b.dims) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + dims_str(a.dims) +
                                " vs " + dims_str(b.dims));
  }
}

}  // namespace vskel
