#include "vskel/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "vskel/random.hpp"

namespace vskel::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Column buffers are produced in chunks of whole output lines so that large
// 3D inputs never materialise the full im2col matrix.
constexpr std::size_t kColumnBudget = std::size_t{1} << 21;

struct ConvGeometry {
  std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;  // input
  std::size_t o = 0, kd = 1, kh = 1, kw = 1;      // kernel
  std::size_t pd = 0, ph = 0, pw = 0;             // padding
  std::size_t sd = 1, sh = 1, sw = 1;             // stride
  std::size_t od = 0, oh = 0, ow = 0;             // output

  std::size_t in_plane() const { return d * h * w; }
  std::size_t out_plane() const { return od * oh * ow; }
  std::size_t k_size() const { return c * kd * kh * kw; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 &&
           pw == 0;
  }
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t pad, std::size_t stride,
                       const char* what) {
  if (in + 2 * pad < k) {
    throw TensorError(std::string(what) + ": kernel extent " + std::to_string(k) +
                      " larger than padded input extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

ConvGeometry plan_conv(const Shape& xs, const ConvParams& p, int dims, const char* what) {
  const Shape& ks = p.kernel.shape();
  const std::size_t want_rank = dims == 2 ? 4 : 5;
  if (xs.size() != want_rank) {
    throw TensorError(std::string(what) + ": expected batched input of rank " +
                      std::to_string(want_rank) + ", got " + shape_str(xs));
  }
  if (ks.size() != want_rank) {
    throw TensorError(std::string(what) + ": kernel rank mismatch " + shape_str(ks));
  }
  ConvGeometry g;
  g.n = xs[0];
  g.c = xs[1];
  if (dims == 3) {
    g.d = xs[2];
    g.h = xs[3];
    g.w = xs[4];
    g.kd = ks[2];
    g.kh = ks[3];
    g.kw = ks[4];
    g.sd = p.stride[0];
  } else {
    g.d = 1;
    g.h = xs[2];
    g.w = xs[3];
    g.kd = 1;
    g.kh = ks[2];
    g.kw = ks[3];
  }
  g.sh = p.stride[1];
  g.sw = p.stride[2];
  g.o = ks[0];
  if (ks[1] != g.c) {
    throw TensorError(std::string(what) + ": input has " + std::to_string(g.c) +
                      " channels, kernel expects " + std::to_string(ks[1]) + " (input " +
                      shape_str(xs) + ", kernel " + shape_str(ks) + ")");
  }
  if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.dim(0) != g.o)) {
    throw TensorError(std::string(what) + ": bias shape " + shape_str(p.bias.shape()) +
                      " does not match " + std::to_string(g.o) + " output channels");
  }
  if (g.sd == 0 || g.sh == 0 || g.sw == 0) throw TensorError(std::string(what) + ": zero stride");
  if (p.padding == Padding::Same) {
    if (g.kd % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0) {
      throw TensorError(std::string(what) + ": 'same' padding needs odd kernel extents");
    }
    g.pd = g.kd / 2;
    g.ph = g.kh / 2;
    g.pw = g.kw / 2;
  }
  g.od = out_extent(g.d, g.kd, g.pd, g.sd, what);
  g.oh = out_extent(g.h, g.kh, g.ph, g.sh, what);
  g.ow = out_extent(g.w, g.kw, g.pw, g.sw, what);
  return g;
}

// Output columns [lo, hi) whose input column ox + kx - pw is inside the row
// (stride 1 only).
std::pair<std::size_t, std::size_t> valid_span(const ConvGeometry& g, std::size_t kx) {
  const std::size_t lo = g.pw > kx ? g.pw - kx : 0;
  const std::size_t hi = std::min(g.ow, g.w + g.pw - kx);
  return {std::min(lo, hi), hi};
}

// Fills col[K, lines * ow] for output lines [line0, line0 + lines) of sample x.
void im2col(const ConvGeometry& g, const double* x, std::size_t line0, std::size_t lines,
            double* col) {
  const std::size_t cols = lines * g.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * g.in_plane();
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          double* dst = col + row * cols;
          for (std::size_t l = 0; l < lines; ++l) {
            const std::size_t line = line0 + l;
            const std::size_t oz = line / g.oh, oy = line % g.oh;
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * g.sd + kz) -
                                      static_cast<std::ptrdiff_t>(g.pd);
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                      static_cast<std::ptrdiff_t>(g.ph);
            double* out = dst + l * g.ow;
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d) || iy < 0 ||
                iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill_n(out, g.ow, 0.0);
              continue;
            }
            const double* src = xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
            if (g.sw == 1) {
              const auto [lo, hi] = valid_span(g, kx);
              std::fill_n(out, lo, 0.0);
              if (hi > lo) std::copy_n(src + lo + kx - g.pw, hi - lo, out + lo);
              std::fill(out + hi, out + g.ow, 0.0);
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                                        static_cast<std::ptrdiff_t>(g.pw);
              out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, std::size_t line0, std::size_t lines,
            double* dx) {
  const std::size_t cols = lines * g.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c; ++c) {
    double* xc = dx + c * g.in_plane();
    for (std::size_t kz = 0; kz < g.kd; ++kz) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
          const double* src = col + row * cols;
          for (std::size_t l = 0; l < lines; ++l) {
            const std::size_t line = line0 + l;
            const std::size_t oz = line / g.oh, oy = line % g.oh;
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * g.sd + kz) -
                                      static_cast<std::ptrdiff_t>(g.pd);
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                      static_cast<std::ptrdiff_t>(g.ph);
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d) || iy < 0 ||
                iy >= static_cast<std::ptrdiff_t>(g.h)) {
              continue;
            }
            double* dst = xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
            const double* in = src + l * g.ow;
            if (g.sw == 1) {
              const auto [lo, hi] = valid_span(g, kx);
              double* d = dst + static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pw);
              for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += in[ox];
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                                        static_cast<std::ptrdiff_t>(g.pw);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

std::size_t lines_per_chunk(const ConvGeometry& g) {
  const std::size_t per_line = std::max<std::size_t>(1, g.k_size() * g.ow);
  return std::clamp<std::size_t>(kColumnBudget / per_line, 1, g.od * g.oh);
}

Tensor conv_forward(const Tensor& x, const ConvParams& p, int dims, const char* what) {
  const ConvGeometry g = plan_conv(x.shape(), p, dims, what);
  const std::size_t K = g.k_size(), P = g.out_plane(), lines_total = g.od * g.oh;
  std::vector<double> out(g.n * g.o * P);
  MapConstMat weight(p.kernel.data().data(), g.o, K);
  const auto xin = x.data();
  const bool pointwise = g.pointwise();
  const std::size_t chunk = lines_per_chunk(g);
  std::vector<double> col(pointwise ? 0 : K * chunk * g.ow);

  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = xin.data() + n * g.c * g.in_plane();
    double* on = out.data() + n * g.o * P;
    if (pointwise) {
      MapConstMat xm(xn, K, P);
      MapMat om(on, g.o, P);
      om.noalias() = weight * xm;
    } else {
      for (std::size_t l0 = 0; l0 < lines_total; l0 += chunk) {
        const std::size_t lines = std::min(chunk, lines_total - l0);
        const std::size_t cols = lines * g.ow;
        im2col(g, xn, l0, lines, col.data());
        MapConstMat cm(col.data(), K, cols);
        StridedMap om(on + l0 * g.ow, g.o, cols, Eigen::OuterStride<>(P));
        om.noalias() = weight * cm;
      }
    }
    if (p.bias.defined()) {
      const auto b = p.bias.data();
      for (std::size_t o = 0; o < g.o; ++o) {
        double* row = on + o * P;
        for (std::size_t i = 0; i < P; ++i) row[i] += b[o];
      }
    }
  }

  Shape out_shape = dims == 3 ? Shape{g.n, g.o, g.od, g.oh, g.ow} : Shape{g.n, g.o, g.oh, g.ow};
  std::vector<Tensor> inputs{x, p.kernel};
  if (p.bias.defined()) inputs.push_back(p.bias);
  const Tensor kernel = p.kernel, bias = p.bias;
  return autograd::make_result(
      std::move(out_shape), std::move(out), what, std::move(inputs),
      [x, kernel, bias, g](std::span<const double> grad, std::span<const double>) {
        const std::size_t K = g.k_size(), P = g.out_plane(), lines_total = g.od * g.oh;
        const bool want_x = autograd::wants_grad(x);
        const bool want_w = autograd::wants_grad(kernel);
        const bool want_b = bias.defined() && autograd::wants_grad(bias);
        MapConstMat weight(kernel.data().data(), g.o, K);
        const auto xin = x.data();
        std::optional<MapMat> dw;
        if (want_w) dw.emplace(autograd::grad_buffer(kernel).data(), g.o, K);
        double* dx = want_x ? autograd::grad_buffer(x).data() : nullptr;
        const bool pointwise = g.pointwise();
        const std::size_t chunk = lines_per_chunk(g);
        std::vector<double> col(pointwise ? 0 : K * chunk * g.ow);
        std::vector<double> dcol(pointwise || !want_x ? 0 : K * chunk * g.ow);

        for (std::size_t n = 0; n < g.n; ++n) {
          const double* gn = grad.data() + n * g.o * P;
          const double* xn = xin.data() + n * g.c * g.in_plane();
          if (want_b) {
            auto db = autograd::grad_buffer(bias);
            for (std::size_t o = 0; o < g.o; ++o) {
              double s = 0.0;
              for (std::size_t i = 0; i < P; ++i) s += gn[o * P + i];
              db[o] += s;
            }
          }
          if (pointwise) {
            MapConstMat gm(gn, g.o, P);
            if (want_w) dw->noalias() += gm * MapConstMat(xn, K, P).transpose();
            if (want_x) {
              MapMat dxm(dx + n * g.c * g.in_plane(), K, P);
              dxm.noalias() += weight.transpose() * gm;
            }
            continue;
          }
          for (std::size_t l0 = 0; l0 < lines_total; l0 += chunk) {
            const std::size_t lines = std::min(chunk, lines_total - l0);
            const std::size_t cols = lines * g.ow;
            StridedConstMap gm(gn + l0 * g.ow, g.o, cols, Eigen::OuterStride<>(P));
            if (want_w) {
              im2col(g, xn, l0, lines, col.data());
              dw->noalias() += gm * MapConstMat(col.data(), K, cols).transpose();
            }
            if (want_x) {
              MapMat dcm(dcol.data(), K, cols);
              dcm.noalias() = weight.transpose() * gm;
              col2im(g, dcol.data(), l0, lines, dx + n * g.c * g.in_plane());
            }
          }
        }
      });
}

}  // namespace

double glorot_bound(std::size_t in, std::size_t out, std::size_t receptive_field) {
  const double fan_in = static_cast<double>(in * receptive_field);
  const double fan_out = static_cast<double>(out * receptive_field);
  return std::sqrt(6.0 / (fan_in + fan_out));
}

ConvParams make_conv(std::size_t in, std::size_t out, std::size_t k, int spatial_dims,
                     std::mt19937_64& rng, Padding padding) {
  std::size_t rf = 1;
  Shape ks{out, in};
  for (int d = 0; d < spatial_dims; ++d) {
    ks.push_back(k);
    rf *= k;
  }
  const double bound = glorot_bound(in, out, rf);
  std::vector<double> w(numel(ks));
  for (double& v : w) v = uniform(rng, -bound, bound);
  ConvParams p;
  p.kernel = Tensor::from(std::move(ks), std::move(w), true);
  p.bias = Tensor::zeros({out}, true);
  p.padding = padding;
  return p;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  if (x.rank() == 3) {
    const Shape& s = x.shape();
    Tensor y = conv_forward(reshape(x, {1, s[0], s[1], s[2]}), p, 2, "conv2d");
    const Shape& ys = y.shape();
    return reshape(y, {ys[1], ys[2], ys[3]});
  }
  return conv_forward(x, p, 2, "conv2d");
}

Tensor conv3d(const Tensor& x, const ConvParams& p) {
  if (x.rank() == 4) {
    const Shape& s = x.shape();
    Tensor y = conv_forward(reshape(x, {1, s[0], s[1], s[2], s[3]}), p, 3, "conv3d");
    const Shape& ys = y.shape();
    return reshape(y, {ys[1], ys[2], ys[3], ys[4]});
  }
  return conv_forward(x, p, 3, "conv3d");
}

// ---- pooling / upsampling -----------------------------------------------------

namespace {

struct Trailing {
  std::size_t outer = 1, d = 1, h = 1, w = 1;
};

Trailing split_trailing(const Shape& s, int dims, const char* what) {
  if (dims != 2 && dims != 3) throw TensorError(std::string(what) + ": dims must be 2 or 3");
  if (s.size() < static_cast<std::size_t>(dims)) {
    throw TensorError(std::string(what) + ": rank too small for shape " + shape_str(s));
  }
  Trailing t;
  const std::size_t lead = s.size() - dims;
  for (std::size_t i = 0; i < lead; ++i) t.outer *= s[i];
  if (dims == 3) t.d = s[lead];
  t.h = s[s.size() - 2];
  t.w = s[s.size() - 1];
  return t;
}

}  // namespace

Tensor maxpool(const Tensor& x, std::size_t window, int dims) {
  const Shape& s = x.shape();
  const Trailing t = split_trailing(s, dims, "maxpool");
  if (window == 0) throw TensorError("maxpool: zero window");
  const std::size_t wd = dims == 3 ? window : 1;
  if (t.d % wd || t.h % window || t.w % window) {
    throw TensorError("maxpool: spatial extents of " + shape_str(s) + " not divisible by window " +
                      std::to_string(window) + "; pad the input first");
  }
  const std::size_t od = t.d / wd, oh = t.h / window, ow = t.w / window;
  Shape out_shape = s;
  if (dims == 3) out_shape[s.size() - 3] = od;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;
  const auto xin = x.data();
  std::vector<double> out(t.outer * od * oh * ow);
  auto arg = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < t.outer; ++b) {
    const std::size_t base = b * t.d * t.h * t.w;
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
          double best = 0.0;
          std::size_t best_i = 0;
          bool first = true;
          for (std::size_t dz = 0; dz < wd; ++dz) {
            for (std::size_t dy = 0; dy < window; ++dy) {
              const std::size_t row = base + ((z * wd + dz) * t.h + y * window + dy) * t.w;
              for (std::size_t dx = 0; dx < window; ++dx) {
                const std::size_t i = row + xo * window + dx;
                if (first || xin[i] > best) {
                  best = xin[i];
                  best_i = i;
                  first = false;
                }
              }
            }
          }
          out[o] = best;
          (*arg)[o] = static_cast<std::uint32_t>(best_i);
        }
      }
    }
  }
  return autograd::make_result(std::move(out_shape), std::move(out), "maxpool", {x},
                               [x, arg](std::span<const double> g, std::span<const double>) {
                                 auto gx = autograd::grad_buffer(x);
                                 for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
                               });
}

Tensor upsample(const Tensor& x, std::size_t factor, int dims) {
  const Shape& s = x.shape();
  const Trailing t = split_trailing(s, dims, "upsample");
  if (factor == 0) throw TensorError("upsample: factor must be at least 1");
  const std::size_t fd = dims == 3 ? factor : 1;
  const std::size_t od = t.d * fd, oh = t.h * factor, ow = t.w * factor;
  Shape out_shape = s;
  if (dims == 3) out_shape[s.size() - 3] = od;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;
  const auto xin = x.data();
  std::vector<double> out(t.outer * od * oh * ow);
  std::size_t o = 0;
  for (std::size_t b = 0; b < t.outer; ++b) {
    const double* src = xin.data() + b * t.d * t.h * t.w;
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        const double* row = src + ((z / fd) * t.h + y / factor) * t.w;
        for (std::size_t xo = 0; xo < ow; ++xo) out[o++] = row[xo / factor];
      }
    }
  }
  return autograd::make_result(
      std::move(out_shape), std::move(out), "upsample", {x},
      [x, t, fd, factor, od, oh, ow](std::span<const double> g, std::span<const double>) {
        auto gx = autograd::grad_buffer(x);
        std::size_t o = 0;
        for (std::size_t b = 0; b < t.outer; ++b) {
          double* dst = gx.data() + b * t.d * t.h * t.w;
          for (std::size_t z = 0; z < od; ++z) {
            for (std::size_t y = 0; y < oh; ++y) {
              double* row = dst + ((z / fd) * t.h + y / factor) * t.w;
              for (std::size_t xo = 0; xo < ow; ++xo) row[xo / factor] += g[o++];
            }
          }
        }
      });
}

// ---- batch normalisation ---------------------------------------------------------

BatchNormParams BatchNormParams::make(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, true);
  p.beta = Tensor::zeros({channels}, true);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw TensorError("batchnorm: input needs a channel axis, got " + shape_str(s));
  const std::size_t n = s[0], c = s[1];
  if (p.gamma.numel() != c || p.beta.numel() != c) {
    throw TensorError("batchnorm: " + std::to_string(c) + " channels but parameters for " +
                      std::to_string(p.gamma.numel()));
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  const std::size_t m = n * spatial;
  const auto xin = x.data();
  const auto gamma = p.gamma.data(), beta = p.beta.data();

  auto xhat = std::make_shared<std::vector<double>>(xin.size());
  auto invstd = std::make_shared<std::vector<double>>(c);
  std::vector<double> out(xin.size());

  if (mode == Mode::Train) {
    if (m < 2) throw TensorError("batchnorm: training needs more than one value per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = xin.data() + (b * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sum += src[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = xin.data() + (b * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / static_cast<double>(m);
      (*invstd)[ch] = 1.0 / std::sqrt(var + p.epsilon);
      const double unbiased = sq / static_cast<double>(m - 1);
      p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mu;
      p.running_var[ch] = (1.0 - p.momentum) * p.running_var[ch] + p.momentum * unbiased;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double xh = (xin[off + i] - mu) * (*invstd)[ch];
          (*xhat)[off + i] = xh;
          out[off + i] = gamma[ch] * xh + beta[ch];
        }
      }
    }
    ++p.batches_tracked;
  } else {
    if (p.batches_tracked == 0) {
      throw TensorError("batchnorm: eval mode before any training step (running statistics unset)");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*invstd)[ch] = 1.0 / std::sqrt(p.running_var[ch] + p.epsilon);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double xh = (xin[off + i] - p.running_mean[ch]) * (*invstd)[ch];
          (*xhat)[off + i] = xh;
          out[off + i] = gamma[ch] * xh + beta[ch];
        }
      }
    }
  }

  const Tensor g_t = p.gamma, b_t = p.beta;
  const bool train = mode == Mode::Train;
  return autograd::make_result(
      s, std::move(out), "batchnorm", {x, p.gamma, p.beta},
      [x, g_t, b_t, xhat, invstd, n, c, spatial, m, train](std::span<const double> g,
                                                           std::span<const double>) {
        const auto gamma = g_t.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * (*xhat)[off + i];
            }
          }
          if (autograd::wants_grad(g_t)) autograd::grad_buffer(g_t)[ch] += sum_gx;
          if (autograd::wants_grad(b_t)) autograd::grad_buffer(b_t)[ch] += sum_g;
          if (!autograd::wants_grad(x)) continue;
          auto gx = autograd::grad_buffer(x);
          const double scale = gamma[ch] * (*invstd)[ch];
          const double md = static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              if (train) {
                gx[off + i] += scale / md * (md * g[off + i] - sum_g - (*xhat)[off + i] * sum_gx);
              } else {
                gx[off + i] += scale * g[off + i];
              }
            }
          }
        }
      });
}

// ---- activations ---------------------------------------------------------------

namespace {

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

template <class Fwd, class Deriv>
Tensor activation(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xin = x.data();
  std::vector<double> out(xin.size());
  for (std::size_t i = 0; i < xin.size(); ++i) out[i] = fwd(xin[i]);
  return autograd::make_result(x.shape(), std::move(out), name, {x},
                               [x, deriv](std::span<const double> g, std::span<const double> y) {
                                 auto gx = autograd::grad_buffer(x);
                                 const auto xin = x.data();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   gx[i] += g[i] * deriv(xin[i], y[i]);
                                 }
                               });
}

}  // namespace

Tensor leaky_relu(const Tensor& x, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw TensorError("leaky_relu: alpha must lie in (0,1)");
  return activation(
      x, "leaky_relu", [alpha](double v) { return v >= 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v >= 0.0 ? 1.0 : alpha; });
}

Tensor sigmoid(const Tensor& x) {
  return activation(x, "sigmoid", stable_sigmoid,
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return activation(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

// ---- ConvLSTM -------------------------------------------------------------------

ConvLstmWeights ConvLstmWeights::make(std::size_t input_channels, std::size_t filters,
                                      std::mt19937_64& rng) {
  ConvLstmWeights w;
  w.input_channels = input_channels;
  w.filters = filters;
  w.gates = make_conv(input_channels + filters, 4 * filters, 3, 2, rng);
  return w;
}

ConvLstmState ConvLstmState::zeros(std::size_t batch, std::size_t filters, std::size_t height,
                                   std::size_t width) {
  return {Tensor::zeros({batch, filters, height, width}),
          Tensor::zeros({batch, filters, height, width})};
}

Tensor lstm_cell(const Tensor& pre, const Tensor& c_prev) {
  const Shape& ps = pre.shape();
  const Shape& cs = c_prev.shape();
  if (ps.size() < 2 || cs.size() != ps.size() || ps[1] != 4 * cs[1] || ps[0] != cs[0]) {
    throw TensorError("lstm_cell: pre-activation " + shape_str(ps) +
                      " incompatible with cell state " + shape_str(cs));
  }
  for (std::size_t i = 2; i < ps.size(); ++i) {
    if (ps[i] != cs[i]) {
      throw TensorError("lstm_cell: spatial mismatch " + shape_str(ps) + " vs " + shape_str(cs));
    }
  }
  const std::size_t n = ps[0], f = cs[1];
  const std::size_t s = numel(cs) / (n * f);
  const auto pin = pre.data();
  const auto cin = c_prev.data();
  // gates[n][4F][s] after activation, then tanh(c) [n][F][s]
  auto act = std::make_shared<std::vector<double>>(pin.size() + cin.size());
  Shape out_shape = cs;
  out_shape[1] = 2 * f;
  std::vector<double> out(2 * cin.size());
  for (std::size_t b = 0; b < n; ++b) {
    const double* pb = pin.data() + b * 4 * f * s;
    double* ab = act->data() + b * 4 * f * s;
    double* tc = act->data() + pin.size() + b * f * s;
    const double* cb = cin.data() + b * f * s;
    double* hb = out.data() + b * 2 * f * s;
    double* cnew = hb + f * s;
    for (std::size_t j = 0; j < f * s; ++j) {
      const double i_g = stable_sigmoid(pb[j]);
      const double f_g = stable_sigmoid(pb[f * s + j]);
      const double o_g = stable_sigmoid(pb[2 * f * s + j]);
      const double g_g = std::tanh(pb[3 * f * s + j]);
      ab[j] = i_g;
      ab[f * s + j] = f_g;
      ab[2 * f * s + j] = o_g;
      ab[3 * f * s + j] = g_g;
      const double c = f_g * cb[j] + i_g * g_g;
      tc[j] = std::tanh(c);
      cnew[j] = c;
      hb[j] = o_g * tc[j];
    }
  }
  return autograd::make_result(
      std::move(out_shape), std::move(out), "lstm_cell", {pre, c_prev},
      [pre, c_prev, act, n, f, s](std::span<const double> g, std::span<const double>) {
        const bool want_pre = autograd::wants_grad(pre);
        const bool want_c = autograd::wants_grad(c_prev);
        const auto cin = c_prev.data();
        double* dpre = want_pre ? autograd::grad_buffer(pre).data() : nullptr;
        double* dc = want_c ? autograd::grad_buffer(c_prev).data() : nullptr;
        const std::size_t gates_total = n * 4 * f * s;
        for (std::size_t b = 0; b < n; ++b) {
          const double* ab = act->data() + b * 4 * f * s;
          const double* tc = act->data() + gates_total + b * f * s;
          const double* cb = cin.data() + b * f * s;
          const double* gh = g.data() + b * 2 * f * s;
          const double* gc = gh + f * s;
          for (std::size_t j = 0; j < f * s; ++j) {
            const double i_g = ab[j], f_g = ab[f * s + j], o_g = ab[2 * f * s + j],
                         g_g = ab[3 * f * s + j];
            const double dct = gc[j] + gh[j] * o_g * (1.0 - tc[j] * tc[j]);
            if (dpre) {
              double* d = dpre + b * 4 * f * s;
              d[j] += dct * g_g * i_g * (1.0 - i_g);
              d[f * s + j] += dct * cb[j] * f_g * (1.0 - f_g);
              d[2 * f * s + j] += gh[j] * tc[j] * o_g * (1.0 - o_g);
              d[3 * f * s + j] += dct * i_g * (1.0 - g_g * g_g);
            }
            if (dc) dc[b * f * s + j] += dct * f_g;
          }
        }
      });
}

ConvLstmStep convlstm_step(const Tensor& x_t, const ConvLstmState& state,
                           const ConvLstmWeights& w) {
  const Shape& xs = x_t.shape();
  const Shape& hs = state.h.shape();
  if (xs.size() != 4 || hs.size() != 4 || xs[0] != hs[0] || xs[2] != hs[2] || xs[3] != hs[3]) {
    throw TensorError("convlstm_step: input " + shape_str(xs) + " does not match state " +
                      shape_str(hs));
  }
  if (xs[1] != w.input_channels || hs[1] != w.filters) {
    throw TensorError("convlstm_step: weights expect " + std::to_string(w.input_channels) +
                      " input channels and " + std::to_string(w.filters) + " filters, got " +
                      shape_str(xs) + " / " + shape_str(hs));
  }
  const Tensor pre = conv2d(concat({x_t, state.h}, 1), w.gates);
  const Tensor hc = lstm_cell(pre, state.c);
  Tensor h = slice(hc, 1, 0, w.filters);
  Tensor c = slice(hc, 1, w.filters, 2 * w.filters);
  return {h, {h, c}};
}

std::vector<Tensor> convlstm_sequence(std::span<const Tensor> seq, const ConvLstmWeights& w,
                                      bool reverse) {
  if (seq.empty()) throw TensorError("convlstm_sequence: empty sequence");
  const Shape& s0 = seq.front().shape();
  if (s0.size() != 4) throw TensorError("convlstm_sequence: slices must be [N,C,H,W]");
  ConvLstmState state = ConvLstmState::zeros(s0[0], w.filters, s0[2], s0[3]);
  std::vector<Tensor> out(seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const std::size_t t = reverse ? seq.size() - 1 - k : k;
    if (seq[t].shape() != s0) {
      throw TensorError("convlstm_sequence: slice " + std::to_string(t) + " has shape " +
                        shape_str(seq[t].shape()) + ", expected " + shape_str(s0));
    }
    auto step = convlstm_step(seq[t], state, w);
    out[t] = step.h;
    state = std::move(step.state);
  }
  return out;
}

BiConvLstmWeights BiConvLstmWeights::make(std::size_t input_channels, std::size_t filters,
                                          std::size_t out_channels, bool bidirectional,
                                          std::mt19937_64& rng) {
  BiConvLstmWeights w;
  w.forward = ConvLstmWeights::make(input_channels, filters, rng);
  if (bidirectional) w.backward = ConvLstmWeights::make(input_channels, filters, rng);
  w.compress = make_conv(bidirectional ? 2 * filters : filters, out_channels, 1, 2, rng);
  return w;
}

std::vector<Tensor> bidirectional_convlstm(std::span<const Tensor> seq,
                                           const BiConvLstmWeights& w) {
  if (seq.empty()) throw TensorError("bidirectional_convlstm: empty sequence");
  const auto fwd = convlstm_sequence(seq, w.forward, false);
  std::vector<Tensor> out;
  out.reserve(seq.size());
  if (!w.bidirectional()) {
    for (const auto& h : fwd) out.push_back(conv2d(h, w.compress));
    return out;
  }
  const auto bwd = convlstm_sequence(seq, *w.backward, true);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out.push_back(conv2d(concat({fwd[t], bwd[t]}, 1), w.compress));
  }
  return out;
}

}  // namespace vskel::nn
