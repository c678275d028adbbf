#pragma once

#include <cstddef>
#include <span>

#include "vsanet/nn/tensor.hpp"
#include "vsanet/stdct.hpp"

namespace vsanet {

/// Differentiable batched inverse STDCT. `spec` is [B, 1, F, T] with
/// F == frames.win_len; item b uses its first frames.frame_count(lengths[b])
/// frames and yields lengths[b] samples. Output is [B, max(lengths)], zero
/// past each item's length. Matches dsp::istdct item by item.
template <typename Real>
nn::Tensor<Real> istdct_batch(const nn::Tensor<Real>& spec, const dsp::FrameConfig& frames,
                              std::span<const std::size_t> lengths);

}  // namespace vsanet
