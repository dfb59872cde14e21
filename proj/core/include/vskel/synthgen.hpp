#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vskel/graph.hpp"
#include "vskel/random.hpp"
#include "vskel/volume.hpp"

namespace vskel::synth {

struct NoiseParams {
  double gaussian_sd = 0.05;
  double snp_fraction = 0.002;
  double poisson_scale = 50.0;  // counts at intensity 1; 0 disables
};

struct PhantomParams {
  std::size_t n_vessels = 4;
  std::array<double, 2> radius_range_um{3.0, 12.0};
  std::array<double, 2> length_range_um{80.0, 200.0};
  double step_um = 2.0;
  double persistence = 0.8;
  double branch_probability = 0.01;
  double sigma1_um = 2.0;
  double sigma2_um = 4.0;
  NoiseParams noise;
  long jitter_max_vox = 2;

  void validate() const;  // throws std::invalid_argument naming the field
};

struct Centerlines {
  Volume skeleton;
  SkeletonGraph graph;
  std::vector<std::vector<Point>> vessels;  // one polyline per walk
  std::vector<double> radii_um;             // one per walk
};

/// Biased random walks in micrometre space. Each vessel starts at a uniform
/// point with a uniform direction, steps by step_um with direction
/// normalize(p * previous + (1 - p) * random unit), reflects at the borders
/// and spawns a branch (inheriting the radius) with branch_probability per
/// step. Walk lengths are uniform in length_range_um.
Centerlines grow_centerlines(const PhantomParams& params, std::array<std::size_t, 3> dims,
                             std::array<double, 3> spacing, Rng& rng);

/// Foreground where the anisotropic distance to a vessel's polyline is at
/// most that vessel's radius, united with the skeleton.
Volume dilate_to_mask(const Volume& skeleton, const std::vector<std::vector<Point>>& vessels,
                      const std::vector<double>& radii_um);

struct DistanceMaps {
  Volume d1;  // distance to the nearest foreground voxel (0 on foreground)
  Volume d2;  // distance to the nearest background voxel (0 on background)
};
DistanceMaps distance_maps(const Volume& mask);

/// E = exp(-d1 / sigma1) * exp(-d2 / sigma2)
Volume endothelium(const Volume& d1, const Volume& d2, double sigma1_um, double sigma2_um);

/// Gaussian noise, salt-and-pepper, Poisson counts, then per-slice lateral
/// jitter with edge clamping.
Volume corrupt(const Volume& e, const NoiseParams& noise, long jitter_max_vox, Rng& rng);

struct Phantom {
  Volume image;
  Volume mask;
  Volume skeleton;
  SkeletonGraph graph;
};

Phantom generate_phantom(const PhantomParams& params, std::array<std::size_t, 3> dims,
                         std::array<double, 3> spacing, std::uint64_t seed);

struct DatasetSpec {
  PhantomParams phantom;
  std::size_t n_volumes = 10;
  std::array<std::size_t, 3> volume_dims{128, 128, 16};
  std::array<double, 3> spacing = kDefaultSpacing;
  std::array<std::size_t, 3> tile_dims{64, 64, 16};
  double overlap = 0.5;
  std::uint64_t seed = 0;
};

struct DatasetEntry {
  std::string id;
  std::string image, mask, skeleton, swc;  // paths relative to the dataset root
};

/// Writes <root>/<id>_{image,mask,skeleton}.vvol, <id>.swc, tiles.tsv.
/// Volume i uses the seed sub-stream "volume/<i>", so volumes are independent
/// of one another and of n_volumes.
std::vector<DatasetEntry> generate_dataset(const DatasetSpec& spec,
                                           const std::filesystem::path& root);

}  // namespace vskel::synth
