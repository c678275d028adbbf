#pragma once

#include <cstddef>
#include <utility>

#include "vsanet/nn/tensor.hpp"

// Differentiable operations for the network. Feature maps are laid out as
// [batch, channels, freq, time] with time fastest. Every op along the time
// axis is causal: output frame t reads input frames <= t only.

namespace vsanet::nn {

template <typename Real>
struct Conv2dParams {
  Tensor<Real> weight;  // conv: [C_out, C_in, kF, kT]; tconv: [C_in, C_out, kF, kT]
  Tensor<Real> bias;    // [C_out]
};

template <typename Real>
struct BatchNormParams {
  Tensor<Real> gain;          // [C]
  Tensor<Real> bias;          // [C]
  Tensor<Real> running_mean;  // [C], not trained
  Tensor<Real> running_var;   // [C], not trained, > 0
};

/// Gate rows are stacked (r, z, n), PyTorch order.
template <typename Real>
struct GruParams {
  Tensor<Real> w_ih;  // [3H, I]
  Tensor<Real> w_hh;  // [3H, H]
  Tensor<Real> b_ih;  // [3H]
  Tensor<Real> b_hh;  // [3H]

  std::size_t input_size() const { return w_ih.dim(1); }
  std::size_t hidden_size() const { return w_hh.dim(1); }
};

template <typename Real>
struct LinearParams {
  Tensor<Real> weight;  // [O, I]
  Tensor<Real> bias;    // [O]
};

struct Conv2dOptions {
  std::size_t stride_f = 2;
  std::size_t pad_f = 2;
};

struct TConv2dOptions {
  std::size_t stride_f = 2;
  std::size_t pad_f = 2;
  std::size_t output_pad_f = 1;
};

enum class BnMode { kTrain, kEval };

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;

// Element-wise and reductions.
template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real factor);
template <typename Real> Tensor<Real> sum(const Tensor<Real>& a);
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& x);
template <typename Real> Tensor<Real> tanh(const Tensor<Real>& x);
/// Per-channel PReLU; channel is dimension 1 (or the only dimension for rank 1).
template <typename Real> Tensor<Real> prelu(const Tensor<Real>& x, const Tensor<Real>& slope);
template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);

/// y = x W^T + b over the last dimension.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const LinearParams<Real>& p);

/// Time axis padded with kT-1 leading zeros; freq axis padded `pad_f` on both
/// sides. Time stride is 1.
template <typename Real>
Tensor<Real> conv2d_causal(const Tensor<Real>& x, const Conv2dParams<Real>& p, Conv2dOptions opt);

/// Transposed conv; trailing kT-1 output frames are dropped so the time
/// length is preserved and output frame t depends on input frames t-kT+1..t.
template <typename Real>
Tensor<Real> tconv2d_causal(const Tensor<Real>& x, const Conv2dParams<Real>& p,
                            TConv2dOptions opt);

/// Train mode uses batch statistics over (batch, freq, time) and updates the
/// running statistics in place; eval mode uses the running statistics.
template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& x, const BatchNormParams<Real>& p, BnMode mode,
                          double momentum = kBnMomentum, double eps = kBnEpsilon);

/// x: [B, T, I]; h0: [B, H] or undefined for zeros. Returns [B, T, H].
template <typename Real>
Tensor<Real> gru(const Tensor<Real>& x, const GruParams<Real>& p, const Tensor<Real>& h0 = {});

/// [B, C, F, T] -> [B, 2, F, T]: channel mean then channel max.
template <typename Real> Tensor<Real> channel_pool(const Tensor<Real>& u);
/// u: [B, C, F, T], gate: [B, 1, F, T] broadcast over channels.
template <typename Real>
Tensor<Real> mul_broadcast_channels(const Tensor<Real>& u, const Tensor<Real>& gate);
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

/// [B, C, F, T] -> [B, T, C*F] with feature index c*F + f.
template <typename Real> Tensor<Real> to_frames(const Tensor<Real>& x);
/// Inverse of to_frames.
template <typename Real>
Tensor<Real> from_frames(const Tensor<Real>& x, std::size_t channels, std::size_t freq);

/// Output frequency size of conv2d_causal along an axis of length `freq`.
std::size_t conv_out_freq(std::size_t freq, std::size_t kernel_f, Conv2dOptions opt);
std::size_t tconv_out_freq(std::size_t freq, std::size_t kernel_f, TConv2dOptions opt);

}  // namespace vsanet::nn
