#pragma once

// Straightforward reference implementations used as test oracles. Written for
// clarity, not speed; none of them share code with the library.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<double> random_vector(std::size_t n, unsigned seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// out[o][z][y][x] = b[o] + sum_c sum_k w[o][c][kz][ky][kx] * in[c][z*s+kz-p][y*s+ky-p][x*s+kx-p]
inline std::vector<double> conv3d(const std::vector<double>& in, std::size_t c, std::size_t d,
                                  std::size_t h, std::size_t w, const std::vector<double>& k,
                                  std::size_t o, std::size_t kd, std::size_t kh, std::size_t kw,
                                  const std::vector<double>& bias, long pd, long ph, long pw,
                                  std::size_t& od, std::size_t& oh, std::size_t& ow) {
  od = d + 2 * pd - kd + 1;
  oh = h + 2 * ph - kh + 1;
  ow = w + 2 * pw - kw + 1;
  std::vector<double> out(o * od * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t a = 0; a < kd; ++a)
              for (std::size_t b = 0; b < kh; ++b)
                for (std::size_t e = 0; e < kw; ++e) {
                  const long iz = long(z + a) - pd, iy = long(y + b) - ph, ix = long(x + e) - pw;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= long(d) || iy >= long(h) ||
                      ix >= long(w))
                    continue;
                  acc += k[(((oc * c + ic) * kd + a) * kh + b) * kw + e] *
                         in[((ic * d + iz) * h + iy) * w + ix];
                }
          out[((oc * od + z) * oh + y) * ow + x] = acc + (bias.empty() ? 0.0 : bias[oc]);
        }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace oracle
