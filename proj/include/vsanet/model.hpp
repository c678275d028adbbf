#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsanet/csa.hpp"
#include "vsanet/nn/checkpoint.hpp"
#include "vsanet/nn/ops.hpp"
#include "vsanet/stdct.hpp"

namespace vsanet {

/// Architecture hyperparameters. JSON keys match the field names.
struct ModelConfig {
  std::size_t dct_size = 512;
  /// Frame hop in samples; the window length equals dct_size.
  std::size_t hop = 128;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128, 256};
  std::array<std::size_t, 2> conv_kernel{5, 2};  // (freq, time)
  std::array<std::size_t, 2> conv_stride{2, 1};  // (freq, time)
  std::vector<std::size_t> se_gru_hidden{128, 64, 32};
  std::size_t se_linear_out = 4096;
  std::vector<std::size_t> decoder_channels{128, 64, 32, 16, 1};
  std::array<std::size_t, 2> csa_kernel{7, 15};  // (k_F, k_T)
  std::size_t vad_transform_channels = 8;
  std::vector<std::size_t> vad_gru_hidden{32, 16, 8};
  std::array<std::size_t, 2> vad_linear{8, 1};  // (in, out)
  double mask_clip = 1.0;

  /// Desk-scale configuration used by tests and toy training.
  static ModelConfig toy();

  /// Throws std::invalid_argument when the shape algebra does not close.
  void validate() const;

  std::size_t depth() const { return encoder_channels.size(); }
  /// Frequency size after the encoder (dct_size / stride^depth).
  std::size_t bottleneck_freq() const;
  /// Frequency size after the VAD feature-transform conv.
  std::size_t vad_freq() const;
  nn::Conv2dOptions conv_options() const;
  nn::TConv2dOptions tconv_options() const;
  dsp::FrameConfig frame_config() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// conv + batch norm + PReLU. `prelu` is undefined for the mask-producing
/// decoder block, whose activation is mask_clip * tanh.
template <typename Real>
struct ConvBlock {
  nn::Conv2dParams<Real> conv;
  nn::BatchNormParams<Real> bn;
  nn::Tensor<Real> prelu;
};

template <typename Real>
struct NamedTensor {
  std::string name;
  nn::Tensor<Real> tensor;
  bool trainable = true;
};

template <typename Real>
struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlock<Real>> encoder;
  std::vector<nn::GruParams<Real>> se_gru;
  nn::LinearParams<Real> se_linear;
  /// skip_csa[j] gates the encoder feature concatenated into decoder block j.
  std::vector<CsaParams<Real>> skip_csa;
  std::vector<ConvBlock<Real>> decoder;
  /// decoder_csa[j] follows decoder block j; none after the final block.
  std::vector<CsaParams<Real>> decoder_csa;
  ConvBlock<Real> vad_transform;
  std::vector<nn::GruParams<Real>> vad_gru;
  nn::LinearParams<Real> vad_linear;

  /// Every tensor (including batch-norm running statistics) in checkpoint order.
  std::vector<NamedTensor<Real>> named_tensors() const;
  std::vector<nn::Tensor<Real>> trainable_tensors() const;
  std::size_t trainable_count() const;

  ModelParams clone() const;
  void set_requires_grad(bool flag) const;
  void zero_grad() const;
};

/// Deterministic initialisation: weights and biases uniform in
/// +-1/sqrt(fan_in), PReLU slope 0.25, BN gain 1 / bias 0 / var 1, CSA zero.
template <typename Real>
ModelParams<Real> build_model(const ModelConfig& config, std::uint64_t seed);

/// Trainable parameter count derived from the configuration alone.
std::size_t param_count(const ModelConfig& config);

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& params);

enum class Mode { kTrain, kEval };

template <typename Real>
struct ModelOutput {
  nn::Tensor<Real> mask;          // [B, 1, F, T], in (-mask_clip, mask_clip)
  nn::Tensor<Real> vad;           // [B, T], in (0, 1)
  nn::Tensor<Real> encoded;       // E: [B, C', F', T]
  nn::Tensor<Real> vad_features;  // K: [B, C'', F'', T]
};

/// x: [B, 1, dct_size, T] STDCT spectrum. Train mode uses batch statistics
/// and updates the running statistics held by `params`.
template <typename Real>
ModelOutput<Real> forward(const ModelParams<Real>& params, const nn::Tensor<Real>& x, Mode mode);

/// Element-wise product of the spectrum and a mask of the same shape.
dsp::Spectrogram apply_mask(const dsp::Spectrogram& x, std::span<const double> mask);

struct Enhanced {
  dsp::Waveform audio;
  std::vector<double> vad;
};

/// Maps a noisy spectrum to a mask (row-major F x T) plus per-frame VAD scores.
using MaskEstimator = std::function<std::pair<std::vector<double>, std::vector<double>>(const dsp::Spectrogram&)>;

/// stdct -> mask -> apply_mask -> istdct. Throws UnsupportedRate unless 16 kHz.
Enhanced enhance_with(const MaskEstimator& estimator, const dsp::FrameConfig& frames,
                      const dsp::Waveform& wave);

template <typename Real>
Enhanced enhance(const ModelParams<Real>& params, const dsp::Waveform& wave);

template <typename Real>
nn::Checkpoint to_checkpoint(const ModelParams<Real>& params);
/// Validates names and shapes against the configuration in the checkpoint.
template <typename Real>
ModelParams<Real> from_checkpoint(const nn::Checkpoint& ckpt);

template <typename Real>
void save_model(const std::filesystem::path& path, const ModelParams<Real>& params) {
  nn::save_checkpoint(path, to_checkpoint(params));
}

template <typename Real>
ModelParams<Real> load_model(const std::filesystem::path& path) {
  return from_checkpoint<Real>(nn::load_checkpoint(path));
}

}  // namespace vsanet
