#include "vskel/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vskel::loss {

std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::Bce: return "bce";
    case LossKind::Wbce: return "wbce";
    case LossKind::Dice: return "dice";
  }
  return "?";
}

std::string_view loss_label(LossKind k) {
  switch (k) {
    case LossKind::Bce: return "bce";
    case LossKind::Wbce: return "w_bce";
    case LossKind::Dice: return "Dice";
  }
  return "?";
}

LossKind parse_loss(std::string_view token) {
  if (token == "bce") return LossKind::Bce;
  if (token == "wbce" || token == "w_bce") return LossKind::Wbce;
  if (token == "dice") return LossKind::Dice;
  throw std::invalid_argument("unknown loss '" + std::string(token) +
                              "' (accepted: bce, wbce, dice)");
}

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

Tensor log_likelihood(const Tensor& x, const Tensor& y) {
  return y * log(x) + (1.0 - y) * log(1.0 - x);
}

}  // namespace

Tensor bce(const Tensor& x, const Tensor& y) {
  same_shape(x, y, "bce");
  return -sum(log_likelihood(x, y));
}

Tensor weighted_bce(const Tensor& x, const Tensor& y, const Tensor& w) {
  same_shape(x, y, "weighted_bce");
  same_shape(x, w, "weighted_bce");
  return -sum(w * log_likelihood(x, y));
}

Tensor dice(const Tensor& x, const Tensor& y, double delta) {
  same_shape(x, y, "dice");
  Tensor num = (sum(x * y) + delta) * 2.0;
  Tensor den = sum(x) + sum(y) + delta;
  return 1.0 - num / den;
}

double class_balance(const std::vector<const Volume*>& targets) {
  std::size_t fg = 0, total = 0;
  for (const Volume* v : targets) {
    fg += v->count_nonzero();
    total += v->size();
  }
  const double ratio = total ? static_cast<double>(fg) / static_cast<double>(total) : 0.0;
  return std::clamp(ratio, kBetaMin, kBetaMax);
}

namespace {

std::vector<double> gaussian_taps(double spacing, double sigma) {
  const long radius = static_cast<long>(std::floor(4.0 * sigma / spacing));
  std::vector<double> taps(2 * radius + 1);
  for (long i = -radius; i <= radius; ++i) {
    const double d = static_cast<double>(i) * spacing;
    taps[i + radius] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return taps;
}

// Zero-padded 1D convolution along `axis` (0 = x, 1 = y, 2 = z).
std::vector<double> smooth_axis(const std::vector<double>& in, const std::array<std::size_t, 3>& d,
                                int axis, const std::vector<double>& taps) {
  const long r = static_cast<long>(taps.size() / 2);
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d[0] : d[0] * d[1];
  const long n = static_cast<long>(d[axis]);
  std::vector<double> out(in.size(), 0.0);
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const std::size_t idx = (z * d[1] + y) * d[0] + x;
        if (in[idx] == 0.0) continue;
        const long pos = static_cast<long>(axis == 0 ? x : axis == 1 ? y : z);
        for (long k = -r; k <= r; ++k) {
          const long q = pos + k;
          if (q < 0 || q >= n) continue;
          out[idx + k * static_cast<long>(stride)] += in[idx] * taps[k + r];
        }
      }
  return out;
}

}  // namespace

Volume weight_map(const Volume& skeleton, double beta, double sigma_um) {
  if (!(beta > 0.0 && beta < 1.0)) {
    throw std::invalid_argument("weight_map: beta must lie in (0,1), got " + std::to_string(beta));
  }
  if (!(sigma_um > 0.0)) throw std::invalid_argument("weight_map: sigma_um must be positive");
  std::vector<double> field = skeleton.data;
  for (int axis = 0; axis < 3; ++axis) {
    field = smooth_axis(field, skeleton.dims, axis, gaussian_taps(skeleton.spacing[axis], sigma_um));
  }
  Volume w(skeleton.dims, skeleton.spacing, VolumeKind::Intensity);
  for (std::size_t i = 0; i < field.size(); ++i) {
    w.data[i] = (1.0 - beta) * field[i] + beta;
  }
  return w;
}

Adam::Adam(std::vector<arch::NamedTensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    slots_.push_back({p.name, std::vector<double>(p.tensor.numel(), 0.0),
                      std::vector<double>(p.tensor.numel(), 0.0)});
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name +
                                 "' at element " + std::to_string(i));
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& s = slots_[k];
    auto w = p.tensor.mutable_data();
    const bool has = p.tensor.has_grad();
    const auto g = has ? p.tensor.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.tensor.zero_grad();
  }
}

}  // namespace vskel::loss
