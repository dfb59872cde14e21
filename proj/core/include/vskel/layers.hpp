#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vskel/tensor.hpp"

namespace vskel::nn {

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

/// Kernel is [out, in, ky, kx] for 2D and [out, in, kz, ky, kx] for 3D.
struct ConvParams {
  Tensor kernel;
  Tensor bias;  // [out]
  Padding padding = Padding::Same;
  std::array<std::size_t, 3> stride{1, 1, 1};  // (z, y, x); z ignored in 2D

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
};

/// Glorot-uniform kernel, zero bias. fan_in = in * k^d, fan_out = out * k^d.
ConvParams make_conv(std::size_t in, std::size_t out, std::size_t k, int spatial_dims,
                     std::mt19937_64& rng, Padding padding = Padding::Same);
double glorot_bound(std::size_t in, std::size_t out, std::size_t receptive_field);

/// x: [N, C, H, W] or [C, H, W].
Tensor conv2d(const Tensor& x, const ConvParams& p);
/// x: [N, C, D, H, W] or [C, D, H, W].
Tensor conv3d(const Tensor& x, const ConvParams& p);

/// Non-overlapping max pooling over the trailing `dims` axes. Extents must be
/// divisible by the window.
Tensor maxpool(const Tensor& x, std::size_t window, int dims);
/// Nearest-neighbour repetition over the trailing `dims` axes.
Tensor upsample(const Tensor& x, std::size_t factor, int dims);

struct BatchNormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  std::uint64_t batches_tracked = 0;

  static BatchNormParams make(std::size_t channels);
};

/// Normalises each channel (axis 1) over batch and spatial axes. Train mode
/// uses batch statistics and updates the running ones.
Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode);

inline constexpr double kLeakySlope = 0.01;

Tensor leaky_relu(const Tensor& x, double alpha = kLeakySlope);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// ---- ConvLSTM --------------------------------------------------------------

/// Gate convolution over concat(x_t, h): kernel [4F, in + F, 3, 3]; gate
/// blocks are ordered input, forget, output, candidate.
struct ConvLstmWeights {
  ConvParams gates;
  std::size_t input_channels = 0;
  std::size_t filters = 0;

  static ConvLstmWeights make(std::size_t input_channels, std::size_t filters,
                              std::mt19937_64& rng);
};

struct ConvLstmState {
  Tensor h;  // [N, F, H, W]
  Tensor c;  // [N, F, H, W]

  static ConvLstmState zeros(std::size_t batch, std::size_t filters, std::size_t height,
                             std::size_t width);
};

/// Fused cell update: pre-activations [N, 4F, H, W] and c_prev [N, F, H, W]
/// give [N, 2F, H, W] = (h_t, c_t) stacked on the channel axis.
Tensor lstm_cell(const Tensor& pre, const Tensor& c_prev);

struct ConvLstmStep {
  Tensor h;
  ConvLstmState state;
};

/// One step of the peephole-free ConvLSTM:
///   i = s(W_i*[x,h] + b_i), f = s(W_f*[x,h] + b_f), o = s(W_o*[x,h] + b_o),
///   g = tanh(W_g*[x,h] + b_g), c' = f.c + i.g, h' = o.tanh(c').
ConvLstmStep convlstm_step(const Tensor& x_t, const ConvLstmState& state,
                           const ConvLstmWeights& w);

/// Runs the unit over a slice sequence (each [N, C, H, W]), front to back
/// unless `reverse`. Returns the hidden map per slice, in sequence order.
std::vector<Tensor> convlstm_sequence(std::span<const Tensor> seq, const ConvLstmWeights& w,
                                      bool reverse = false);

struct BiConvLstmWeights {
  ConvLstmWeights forward;
  std::optional<ConvLstmWeights> backward;  // absent for a unidirectional unit
  ConvParams compress;                      // 1x1, (1 or 2) * F -> out

  static BiConvLstmWeights make(std::size_t input_channels, std::size_t filters,
                                std::size_t out_channels, bool bidirectional,
                                std::mt19937_64& rng);
  bool bidirectional() const { return backward.has_value(); }
};

/// Forward and (independently weighted) reverse passes, hidden maps
/// concatenated per slice, then the shared 1x1 compression.
std::vector<Tensor> bidirectional_convlstm(std::span<const Tensor> seq,
                                           const BiConvLstmWeights& w);

}  // namespace vskel::nn
