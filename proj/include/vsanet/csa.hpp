#pragma once

#include <cstddef>

#include "vsanet/nn/ops.hpp"

namespace vsanet {

/// Causal spatial attention parameters: a 2 -> 1 channel conv over the
/// (avg, max) channel-pooled map.
template <typename Real>
struct CsaParams {
  nn::Tensor<Real> weight;  // [1, 2, kF, kT]
  nn::Tensor<Real> bias;    // [1]

  std::size_t kernel_f() const { return weight.dim(2); }
  std::size_t kernel_t() const { return weight.dim(3); }
  /// kF must be odd (symmetric frequency padding), kT >= 1.
  void validate() const;
};

/// Zero kernel and bias, so the initial attention map is 0.5 everywhere.
template <typename Real>
CsaParams<Real> make_csa(std::size_t kernel_f = 7, std::size_t kernel_t = 15);

/// SAM = sigmoid(conv(pad(pool(U)))): [B, C, F, T] -> [B, 1, F, T]. The time
/// axis is padded with kT-1 zeros at the start only.
template <typename Real>
nn::Tensor<Real> spatial_attention_map(const nn::Tensor<Real>& u, const CsaParams<Real>& p);

/// SAM broadcast over channels and multiplied into U.
template <typename Real>
nn::Tensor<Real> csa_forward(const nn::Tensor<Real>& u, const CsaParams<Real>& p);

}  // namespace vsanet
