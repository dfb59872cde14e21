#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vskel/layers.hpp"

namespace vskel::arch {

enum class Kind { U2D, U2D_CLSTM_S, U2D_CLSTM_D, U3D, CLSTM_D };

std::string_view kind_name(Kind k);   // config token, e.g. "U2D_CLSTM_S"
std::string_view kind_label(Kind k);  // table label, e.g. "U-2D+CLSTM (S)"
Kind parse_kind(std::string_view token);
std::vector<Kind> all_kinds();

bool has_cnn(Kind k);
bool has_head(Kind k);

inline constexpr std::size_t kShallowFilters = 32;
inline constexpr std::size_t kDeepFilters = 20;

struct NetworkSpec {
  Kind kind = Kind::U2D;
  std::vector<std::size_t> channels{16, 32, 64};  // one entry per U-Net level
  std::size_t clstm_filters = 0;                   // 0: kind default (32 shallow, 20 deep)
  bool bidirectional = true;
  double leaky_alpha = nn::kLeakySlope;
  std::uint64_t seed = 0;

  std::size_t depth_levels() const { return channels.size(); }
  std::size_t filters() const;
  /// Spatial extents must be multiples of this (per pooled axis).
  std::size_t divisor() const;
  std::string describe() const;
  /// Inverse of describe() (the spec echo stored in checkpoints).
  static NetworkSpec parse(std::string_view text);
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBatchNorm {
  std::string name;
  nn::BatchNormParams* params;
};

struct ForwardResult {
  Tensor output;        // [N, 1, D, H, W]
  Tensor intermediate;  // CNN probabilities for combined kinds, else undefined
};

/// One of the five comparator networks. All kinds map an image batch
/// [N, 1, D, H, W] (D = slices along z) to per-voxel probabilities of the
/// same shape.
class Network {
 public:
  explicit Network(NetworkSpec spec);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }

  Tensor forward(const Tensor& x, nn::Mode mode);
  ForwardResult forward_detailed(const Tensor& x, nn::Mode mode);
  /// The CNN part alone (U2D applied per slice, or U3D on the volume).
  Tensor cnn_forward(const Tensor& x, nn::Mode mode);
  /// The ConvLSTM head alone, on a [N, 1, D, H, W] sequence.
  Tensor head_forward(const Tensor& seq, nn::Mode mode);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> cnn_parameters() const;
  std::vector<NamedTensor> head_parameters() const;
  std::vector<NamedBatchNorm> batchnorms();

  std::size_t count_parameters() const;

 private:
  struct Impl;
  NetworkSpec spec_;
  std::unique_ptr<Impl> impl_;
};

/// Exact trainable-scalar count implied by a spec.
std::size_t count_parameters(const NetworkSpec& spec);

}  // namespace vskel::arch
