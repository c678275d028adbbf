#include "vsanet/synthesis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsanet {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-item synthesis layout shared by the forward and backward passes.
template <typename Real>
struct Plan {
  std::size_t frames = 0;      // frames used
  std::size_t length = 0;      // output samples
  std::vector<Real> inv_env;   // 1 / envelope at padded positions [0, total)
};

}  // namespace

template <typename Real>
nn::Tensor<Real> istdct_batch(const nn::Tensor<Real>& spec, const dsp::FrameConfig& cfg,
                              std::span<const std::size_t> lengths) {
  cfg.validate();
  const std::size_t n = cfg.win_len;
  if (spec.rank() != 4 || spec.dim(1) != 1 || spec.dim(2) != n) {
    throw std::invalid_argument("istdct_batch: expected [B, 1, " + std::to_string(n) + ", T], got " +
                                nn::to_string(spec.shape()));
  }
  const std::size_t B = spec.dim(0), T = spec.dim(3);
  if (lengths.size() != B) throw std::invalid_argument("istdct_batch: one length per batch item required");
  const std::size_t pad = cfg.start_pad();

  auto plans = std::make_shared<std::vector<Plan<Real>>>(B);
  std::size_t max_len = 0;
  for (std::size_t b = 0; b < B; ++b) {
    auto& p = (*plans)[b];
    if (lengths[b] == 0) throw std::invalid_argument("istdct_batch: zero length");
    p.length = lengths[b];
    p.frames = cfg.frame_count(p.length);
    if (p.frames > T) {
      throw std::invalid_argument("istdct_batch: item " + std::to_string(b) + " needs " + std::to_string(p.frames) +
                                  " frames, spectrum has " + std::to_string(T));
    }
    const std::size_t total = (p.frames - 1) * cfg.hop + n;
    std::vector<double> env(total, 0.0);
    for (std::size_t t = 0; t < p.frames; ++t)
      for (std::size_t k = 0; k < n; ++k) env[t * cfg.hop + k] += cfg.window[k] * cfg.window[k];
    p.inv_env.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      p.inv_env[i] = static_cast<Real>(1.0 / (env[i] < dsp::kEnvelopeFloor ? 1.0 : env[i]));
    }
    max_len = std::max(max_len, p.length);
  }

  auto plan = dsp::DctPlan::get(n);
  auto g = std::make_shared<RowMat<Real>>(
      Eigen::Map<const RowMat<double>>(plan->matrix().data(), n, n).template cast<Real>());
  auto window = std::make_shared<std::vector<Real>>(cfg.window.begin(), cfg.window.end());
  const std::size_t hop = cfg.hop;

  using Strided = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;
  std::vector<Real> out(B * max_len, Real{0});
  auto x = spec.data();
  for (std::size_t b = 0; b < B; ++b) {
    const auto& p = (*plans)[b];
    Strided coeffs(x.data() + b * n * T, n, p.frames, Eigen::OuterStride<>(T));
    const RowMat<Real> y = g->transpose() * coeffs;  // n x frames
    std::vector<Real> acc(p.inv_env.size(), Real{0});
    for (std::size_t t = 0; t < p.frames; ++t)
      for (std::size_t k = 0; k < n; ++k) acc[t * hop + k] += (*window)[k] * y(k, t);
    Real* dst = out.data() + b * max_len;
    for (std::size_t i = 0; i < p.length && i + pad < acc.size(); ++i) dst[i] = acc[i + pad] * p.inv_env[i + pad];
  }

  return nn::Tensor<Real>::make_result(
      nn::Shape{B, max_len}, std::move(out), {&spec},
      [spec, plans, g, window, n, T, hop, pad, max_len](nn::TensorNode<Real>& self) {
        auto grad = spec.node()->grad_buffer();
        for (std::size_t b = 0; b < plans->size(); ++b) {
          const auto& p = (*plans)[b];
          const Real* go = self.grad.data() + b * max_len;
          // Scatter the output gradient back onto windowed frames.
          RowMat<Real> d = RowMat<Real>::Zero(n, p.frames);
          for (std::size_t t = 0; t < p.frames; ++t)
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t pos = t * hop + k;
              if (pos < pad || pos - pad >= p.length) continue;
              d(k, t) = (*window)[k] * go[pos - pad] * p.inv_env[pos];
            }
          Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>> gs(grad.data() + b * n * T, n, p.frames,
                                                               Eigen::OuterStride<>(T));
          gs.noalias() += (*g) * d;
        }
      });
}

template nn::Tensor<float> istdct_batch(const nn::Tensor<float>&, const dsp::FrameConfig&,
                                        std::span<const std::size_t>);
template nn::Tensor<double> istdct_batch(const nn::Tensor<double>&, const dsp::FrameConfig&,
                                         std::span<const std::size_t>);

}  // namespace vsanet
