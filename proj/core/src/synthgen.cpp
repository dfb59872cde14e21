#include "vskel/synthgen.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "vskel/distance.hpp"
#include "vskel/io.hpp"
#include "vskel/tiling.hpp"

namespace vskel::synth {

void PhantomParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (n_vessels < 1) fail("n_vessels must be at least 1");
  if (!(radius_range_um[0] > 0.0) || radius_range_um[1] < radius_range_um[0])
    fail("radius_range_um must be positive and ordered");
  if (!(length_range_um[0] > 0.0) || length_range_um[1] < length_range_um[0])
    fail("length_range_um must be positive and ordered");
  if (!(step_um > 0.0)) fail("step_um must be positive");
  if (!(persistence >= 0.0 && persistence < 1.0)) fail("persistence must lie in [0,1)");
  if (!(branch_probability >= 0.0 && branch_probability <= 1.0))
    fail("branch_probability must lie in [0,1]");
  if (!(sigma1_um > 0.0)) fail("sigma1_um must be positive");
  if (!(sigma2_um > 0.0)) fail("sigma2_um must be positive");
  if (!(noise.gaussian_sd >= 0.0)) fail("gaussian_sd must be non-negative");
  if (!(noise.snp_fraction >= 0.0 && noise.snp_fraction <= 1.0))
    fail("snp_fraction must lie in [0,1]");
  if (!(noise.poisson_scale >= 0.0)) fail("poisson_scale must be non-negative");
  if (jitter_max_vox < 0) fail("jitter_max_vox must be non-negative");
}

namespace {

constexpr std::size_t kMaxWalksPerVessel = 16;

Point random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  while (true) {
    Point p{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (len > 1e-9) return {p[0] / len, p[1] / len, p[2] / len};
  }
}

Point normalized(const Point& p) {
  const double len = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  if (len < 1e-12) return {1.0, 0.0, 0.0};
  return {p[0] / len, p[1] / len, p[2] / len};
}

struct Walk {
  std::vector<Point> pts;
  std::size_t vessel = 0;
  long parent = -1;            // parent walk index
  std::size_t parent_at = 0;  // index into parent's points
};

double point_segment_distance(const Point& c, const Point& a, const Point& b) {
  const Point ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Point ac{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  double t = len2 > 0.0 ? (ab[0] * ac[0] + ab[1] * ac[1] + ab[2] * ac[2]) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Point p{a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]};
  return distance(c, p);
}

}  // namespace

Centerlines grow_centerlines(const PhantomParams& params, std::array<std::size_t, 3> dims,
                             std::array<double, 3> spacing, Rng& rng) {
  params.validate();
  Point extent;
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) {
      throw std::invalid_argument("grow_centerlines: volume " + dims_str(dims) +
                                  " too small for any path (need at least 2 voxels per axis)");
    }
    extent[a] = static_cast<double>(dims[a] - 1) * spacing[a];
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform_in = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  std::vector<Walk> walks;
  Centerlines out;
  for (std::size_t v = 0; v < params.n_vessels; ++v) {
    out.radii_um.push_back(uniform_in(params.radius_range_um[0], params.radius_range_um[1]));
    struct Pending {
      Point start;
      long parent;
      std::size_t at;
    };
    std::vector<Pending> queue{{{u01(rng) * extent[0], u01(rng) * extent[1], u01(rng) * extent[2]},
                                -1, 0}};
    std::size_t spawned = 1;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      Walk w;
      w.vessel = v;
      w.parent = queue[qi].parent;
      w.parent_at = queue[qi].at;
      w.pts.push_back(queue[qi].start);
      Point dir = random_unit(rng);
      const double length = uniform_in(params.length_range_um[0], params.length_range_um[1]);
      const auto steps = static_cast<std::size_t>(length / params.step_um);
      Point pos = queue[qi].start;
      const long self = static_cast<long>(walks.size());
      for (std::size_t s = 0; s < steps; ++s) {
        const Point r = random_unit(rng);
        dir = normalized({params.persistence * dir[0] + (1 - params.persistence) * r[0],
                          params.persistence * dir[1] + (1 - params.persistence) * r[1],
                          params.persistence * dir[2] + (1 - params.persistence) * r[2]});
        for (int a = 0; a < 3; ++a) {
          double next = pos[a] + params.step_um * dir[a];
          if (next < 0.0) {
            next = -next;
            dir[a] = -dir[a];
          } else if (next > extent[a]) {
            next = 2.0 * extent[a] - next;
            dir[a] = -dir[a];
          }
          pos[a] = std::clamp(next, 0.0, extent[a]);
        }
        w.pts.push_back(pos);
        if (u01(rng) < params.branch_probability && spawned < kMaxWalksPerVessel &&
            s + 1 < steps) {
          queue.push_back({pos, self, w.pts.size() - 1});
          ++spawned;
        }
      }
      walks.push_back(std::move(w));
    }
  }

  // Graph: nodes at walk starts, branch points and walk ends.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> node_at;  // (walk, index)
  auto node_for = [&](std::size_t walk, std::size_t idx) {
    auto key = std::make_pair(walk, idx);
    auto it = node_at.find(key);
    if (it != node_at.end()) return it->second;
    const std::size_t id = out.graph.add_node(walks[walk].pts[idx]);
    node_at.emplace(key, id);
    return id;
  };
  std::vector<std::vector<std::size_t>> cuts(walks.size());
  for (std::size_t w = 0; w < walks.size(); ++w) {
    if (walks[w].parent >= 0) cuts[walks[w].parent].push_back(walks[w].parent_at);
  }
  for (std::size_t w = 0; w < walks.size(); ++w) {
    const auto& pts = walks[w].pts;
    std::size_t start_node = walks[w].parent >= 0
                                 ? node_for(static_cast<std::size_t>(walks[w].parent), walks[w].parent_at)
                                 : node_for(w, 0);
    std::vector<std::size_t> c = cuts[w];
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    c.push_back(pts.size() - 1);
    std::size_t from = 0, from_node = start_node;
    for (std::size_t cut : c) {
      if (cut <= from) continue;
      const std::size_t to_node = node_for(w, cut);
      out.graph.add_edge(from_node, to_node,
                         std::vector<Point>(pts.begin() + from, pts.begin() + cut + 1));
      from = cut;
      from_node = to_node;
    }
    if (pts.size() == 1 && walks[w].parent < 0) node_for(w, 0);
  }
  for (auto& w : walks) out.vessels.push_back(std::move(w.pts));
  // radii per walk (branches inherit their vessel's radius)
  std::vector<double> per_walk;
  for (const auto& w : walks) per_walk.push_back(out.radii_um[w.vessel]);
  out.radii_um = std::move(per_walk);

  out.skeleton = Volume(dims, spacing, VolumeKind::Skeleton);
  rasterize(out.graph, out.skeleton);
  return out;
}

Volume dilate_to_mask(const Volume& skeleton, const std::vector<std::vector<Point>>& vessels,
                      const std::vector<double>& radii_um) {
  if (vessels.size() != radii_um.size()) {
    throw std::invalid_argument("dilate_to_mask: one radius per vessel required");
  }
  Volume mask = skeleton;
  mask.kind = VolumeKind::Mask;
  const auto& s = skeleton.spacing;
  for (std::size_t v = 0; v < vessels.size(); ++v) {
    const double r = radii_um[v];
    if (r < std::min(s[0], s[1])) {
      spdlog::warn("vessel {} radius {:.3f} um is below the in-plane voxel spacing", v, r);
    }
    const auto& pts = vessels[v];
    for (std::size_t i = 0; i + 1 < pts.size() || (pts.size() == 1 && i == 0); ++i) {
      const Point& a = pts[i];
      const Point& b = pts.size() == 1 ? pts[i] : pts[i + 1];
      long lo[3], hi[3];
      for (int ax = 0; ax < 3; ++ax) {
        lo[ax] = std::max(0L, static_cast<long>(std::floor((std::min(a[ax], b[ax]) - r) / s[ax])));
        hi[ax] = std::min(static_cast<long>(skeleton.dims[ax]) - 1,
                          static_cast<long>(std::ceil((std::max(a[ax], b[ax]) + r) / s[ax])));
      }
      for (long z = lo[2]; z <= hi[2]; ++z)
        for (long y = lo[1]; y <= hi[1]; ++y)
          for (long x = lo[0]; x <= hi[0]; ++x) {
            double& m = mask.at(x, y, z);
            if (m != 0.0) continue;
            if (point_segment_distance(voxel_centre({x, y, z}, s), a, b) <= r) m = 1.0;
          }
      if (pts.size() == 1) break;
    }
  }
  return mask;
}

DistanceMaps distance_maps(const Volume& mask) {
  const std::size_t fg = mask.count_nonzero();
  if (fg == 0 || fg == mask.size()) {
    throw std::invalid_argument("distance_maps: mask must contain both foreground and background");
  }
  return {distance_transform(mask, true), distance_transform(mask, false)};
}

Volume endothelium(const Volume& d1, const Volume& d2, double sigma1_um, double sigma2_um) {
  require_same_dims(d1, d2, "endothelium");
  if (!(sigma1_um > 0.0 && sigma2_um > 0.0)) {
    throw std::invalid_argument("endothelium: sigmas must be positive");
  }
  Volume e(d1.dims, d1.spacing, VolumeKind::Intensity);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e.data[i] = std::exp(-d1.data[i] / sigma1_um) * std::exp(-d2.data[i] / sigma2_um);
  }
  return e;
}

Volume corrupt(const Volume& e, const NoiseParams& noise, long jitter_max_vox, Rng& rng) {
  Volume out = e;
  out.kind = VolumeKind::Intensity;
  if (noise.gaussian_sd > 0.0) {
    std::normal_distribution<double> n(0.0, noise.gaussian_sd);
    for (double& v : out.data) v += n(rng);
  }
  if (noise.snp_fraction > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : out.data) {
      if (u(rng) < noise.snp_fraction) v = u(rng) < 0.5 ? 0.0 : 1.0;
    }
  }
  if (noise.poisson_scale > 0.0) {
    for (double& v : out.data) {
      const double lambda = std::max(v, 0.0) * noise.poisson_scale;
      if (lambda <= 0.0) {
        v = 0.0;
        continue;
      }
      std::poisson_distribution<long> p(lambda);
      v = static_cast<double>(p(rng)) / noise.poisson_scale;
    }
  }
  if (jitter_max_vox > 0) {
    std::uniform_int_distribution<long> j(-jitter_max_vox, jitter_max_vox);
    const long nx = static_cast<long>(e.nx()), ny = static_cast<long>(e.ny());
    std::vector<double> slice(e.nx() * e.ny());
    for (std::size_t z = 0; z < e.nz(); ++z) {
      const long dx = j(rng), dy = j(rng);
      double* base = out.data.data() + z * e.nx() * e.ny();
      std::copy(base, base + slice.size(), slice.begin());
      for (long y = 0; y < ny; ++y)
        for (long x = 0; x < nx; ++x) {
          const long sx = std::clamp(x - dx, 0L, nx - 1), sy = std::clamp(y - dy, 0L, ny - 1);
          base[y * nx + x] = slice[sy * nx + sx];
        }
    }
  }
  return out;
}

Phantom generate_phantom(const PhantomParams& params, std::array<std::size_t, 3> dims,
                         std::array<double, 3> spacing, std::uint64_t seed) {
  params.validate();
  // Spacing is stored as 32-bit floats on disk; canonicalise so that a
  // written and re-read phantom is identical to the generated one.
  for (double& s : spacing) s = static_cast<double>(static_cast<float>(s));
  Rng walk_rng = stream(seed, "centerlines");
  Centerlines c = grow_centerlines(params, dims, spacing, walk_rng);
  Volume mask = dilate_to_mask(c.skeleton, c.vessels, c.radii_um);
  Volume image;
  if (mask.count_nonzero() == mask.size()) {
    image = Volume(dims, spacing, VolumeKind::Intensity, 0.0);  // no background: d2 is infinite
  } else {
    auto d = distance_maps(mask);
    image = endothelium(d.d1, d.d2, params.sigma1_um, params.sigma2_um);
  }
  Rng noise_rng = stream(seed, "noise");
  image = corrupt(image, params.noise, params.jitter_max_vox, noise_rng);
  return {std::move(image), std::move(mask), std::move(c.skeleton), std::move(c.graph)};
}

std::vector<DatasetEntry> generate_dataset(const DatasetSpec& spec,
                                           const std::filesystem::path& root) {
  spec.phantom.validate();
  for (int a = 0; a < 3; ++a) {
    if (spec.tile_dims[a] > spec.volume_dims[a]) {
      throw std::invalid_argument("tile dims " + dims_str(spec.tile_dims) + " exceed volume dims " +
                                  dims_str(spec.volume_dims));
    }
  }
  std::filesystem::create_directories(root);
  std::vector<DatasetEntry> entries;
  std::string tiles = "volume\tx0\ty0\tz0\tnx\tny\tnz\n";
  const auto origins = tile_origins(spec.volume_dims, spec.tile_dims, spec.overlap);
  for (std::size_t i = 0; i < spec.n_volumes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "vol%03zu", i);
    const Phantom ph = generate_phantom(spec.phantom, spec.volume_dims, spec.spacing,
                                        derive_seed(spec.seed, "volume/" + std::to_string(i)));
    DatasetEntry e{id, std::string(id) + "_image.vvol", std::string(id) + "_mask.vvol",
                   std::string(id) + "_skeleton.vvol", std::string(id) + ".swc"};
    io::write_vvol(root / e.image, ph.image);
    io::write_vvol(root / e.mask, ph.mask);
    io::write_vvol(root / e.skeleton, ph.skeleton);
    io::write_text(root / e.swc, to_swc(ph.graph));
    for (const auto& o : origins) {
      tiles += e.id + '\t' + std::to_string(o[0]) + '\t' + std::to_string(o[1]) + '\t' +
               std::to_string(o[2]) + '\t' + std::to_string(spec.tile_dims[0]) + '\t' +
               std::to_string(spec.tile_dims[1]) + '\t' + std::to_string(spec.tile_dims[2]) + '\n';
    }
    entries.push_back(std::move(e));
  }
  io::write_text(root / "tiles.tsv", tiles);
  return entries;
}

}  // namespace vskel::synth
