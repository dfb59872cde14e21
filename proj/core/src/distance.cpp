#include "vskel/distance.hpp"

#include <cmath>
#include <limits>

namespace vskel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the lower-envelope transform along a line of n samples with
// spacing s:  out[q] = min_i f[i] + ((q - i) s)^2.  The envelope picks the
// candidate; the value is re-evaluated exactly and compared with its envelope
// neighbours so near-ties resolve to the true minimum.
void envelope_pass(const double* f, double* out, std::size_t n, double s, std::vector<long>& v,
                   std::vector<double>& z) {
  auto term = [s](long d) {
    const double ds = static_cast<double>(d) * s;
    return ds * ds;
  };
  long k = -1;
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t qi = 0; qi < n; ++qi) {
    if (!std::isfinite(f[qi])) continue;
    const long q = static_cast<long>(qi);
    const double fq = f[q] + term(q);
    while (k >= 0) {
      const long p = v[k];
      const double inter = (fq - (f[p] + term(p))) / (2.0 * s * s * static_cast<double>(q - p));
      if (inter <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    } else {
      const long p = v[k];
      const double inter = (fq - (f[p] + term(p))) / (2.0 * s * s * static_cast<double>(q - p));
      ++k;
      v[k] = q;
      z[k] = inter;
    }
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (std::size_t q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  long j = 0;
  for (std::size_t qi = 0; qi < n; ++qi) {
    const double qd = static_cast<double>(qi);
    while (j < k && z[j + 1] < qd) ++j;
    const long q = static_cast<long>(qi);
    double best = f[v[j]] + term(q - v[j]);
    if (j > 0) best = std::min(best, f[v[j - 1]] + term(q - v[j - 1]));
    if (j < k) best = std::min(best, f[v[j + 1]] + term(q - v[j + 1]));
    out[qi] = best;
  }
}

std::vector<double> transform_sq(std::vector<double> g, const std::array<std::size_t, 3>& d,
                                 const std::array<double, 3>& s) {
  std::vector<long> v;
  std::vector<double> z, line, res;
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = d[axis];
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : d[0] * d[1];
    line.resize(n);
    res.resize(n);
    const std::size_t a1 = axis == 0 ? d[1] : d[0];
    const std::size_t a2 = axis == 2 ? d[1] : d[2];
    for (std::size_t j = 0; j < a2; ++j) {
      for (std::size_t i = 0; i < a1; ++i) {
        std::size_t base;
        if (axis == 0) base = (j * d[1] + i) * d[0];
        else if (axis == 1) base = j * d[0] * d[1] + i;
        else base = j * d[0] + i;
        for (std::size_t q = 0; q < n; ++q) line[q] = g[base + q * stride];
        envelope_pass(line.data(), res.data(), n, s[axis], v, z);
        for (std::size_t q = 0; q < n; ++q) g[base + q * stride] = res[q];
      }
    }
  }
  return g;
}

}  // namespace

Volume distance_transform(const Volume& mask, bool to_foreground) {
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool fg = mask.data[i] != 0.0;
    g[i] = fg == to_foreground ? 0.0 : kInf;
  }
  g = transform_sq(std::move(g), mask.dims, mask.spacing);
  Volume out(mask.dims, mask.spacing, VolumeKind::Intensity);
  for (std::size_t i = 0; i < g.size(); ++i) out.data[i] = std::sqrt(g[i]);
  return out;
}

std::vector<double> distance_transform_sq_voxels(const std::vector<std::uint8_t>& fg,
                                                 const std::array<std::size_t, 3>& dims,
                                                 bool to_foreground) {
  std::vector<double> g(fg.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (fg[i] != 0) == to_foreground ? 0.0 : kInf;
  }
  return transform_sq(std::move(g), dims, {1.0, 1.0, 1.0});
}

}  // namespace vskel
