#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vskel/architectures.hpp"
#include "vskel/tensor.hpp"
#include "vskel/volume.hpp"

namespace vskel::loss {

enum class LossKind { Bce, Wbce, Dice };
std::string_view loss_name(LossKind k);  // "bce", "wbce", "dice"
std::string_view loss_label(LossKind k);  // "bce", "w_bce", "Dice"
LossKind parse_loss(std::string_view token);

/// -sum_i [y_i log x_i + (1 - y_i) log(1 - x_i)]
Tensor bce(const Tensor& x, const Tensor& y);
/// -sum_i W_i [y_i log x_i + (1 - y_i) log(1 - x_i)]
Tensor weighted_bce(const Tensor& x, const Tensor& y, const Tensor& w);
/// 1 - 2 (x.y + delta) / (|x| + |y| + delta), with |.| the element sum.
Tensor dice(const Tensor& x, const Tensor& y, double delta = 1.0);

inline constexpr double kDefaultSigmaUm = 6.0;
inline constexpr double kBetaMin = 1e-4;
inline constexpr double kBetaMax = 0.5;

/// Foreground fraction over a set of target volumes, clamped to [1e-4, 0.5].
double class_balance(const std::vector<const Volume*>& targets);

/// W = (1 - beta) * (y conv g_sigma) + beta, where g_sigma is an anisotropic
/// Gaussian in micrometres with peak value 1, truncated at 4 sigma. W is 1 on
/// an isolated skeleton voxel and grows above 1 along lines, where the kernel
/// tails add up.
Volume weight_map(const Volume& skeleton, double beta, double sigma_um = kDefaultSigmaUm);

// ---- Adam ---------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::string name;
  std::vector<double> m, v;
};

class Adam {
 public:
  Adam(std::vector<arch::NamedTensor> params, AdamConfig cfg = {});

  /// Applies one update from the parameters' accumulated gradients (absent
  /// gradients count as zero) and clears them.
  void step();
  void zero_grad();

  std::uint64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<AdamSlot>& slots() const { return slots_; }
  std::vector<AdamSlot>& slots() { return slots_; }
  void set_t(std::uint64_t t) { t_ = t; }

 private:
  std::vector<arch::NamedTensor> params_;
  std::vector<AdamSlot> slots_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace vskel::loss
