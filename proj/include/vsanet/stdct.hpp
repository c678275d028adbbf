#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace vsanet::dsp {

/// Mono audio. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_seconds() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  /// Throws std::invalid_argument on a non-positive rate or non-finite samples.
  void validate() const;
};

/// Synthesis envelope values below this are treated as 1.
inline constexpr double kEnvelopeFloor = 1e-8;

/// Analysis/synthesis framing. `win_len` doubles as the DCT size.
struct FrameConfig {
  std::size_t win_len = 512;
  std::size_t hop = 128;
  std::vector<double> window;

  /// Periodic Hamming: w[n] = 0.54 - 0.46 cos(2 pi n / win_len).
  static FrameConfig hamming(std::size_t win_len = 512, std::size_t hop = 128);
  static FrameConfig rectangular(std::size_t win_len, std::size_t hop);

  void validate() const;
  /// Zeros prepended before framing so every sample sees a full set of windows.
  std::size_t start_pad() const noexcept { return win_len - hop; }
  /// Number of frames produced for a signal of `len` samples.
  std::size_t frame_count(std::size_t len) const;
};

/// F x T matrix of STDCT coefficients, stored row-major (bin-major, time
/// fastest) so that it maps directly onto a [1, 1, F, T] tensor.
struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> coeffs;
  FrameConfig frame_config;
  std::size_t original_len = 0;

  double& at(std::size_t f, std::size_t t) { return coeffs[f * frames + t]; }
  double at(std::size_t f, std::size_t t) const { return coeffs[f * frames + t]; }
};

/// Orthonormal DCT-II of size N held as a dense N x N matrix (row = bin).
/// Instances are immutable and may be shared between threads.
class DctPlan {
 public:
  explicit DctPlan(std::size_t n);

  /// Cached plan for size n; thread-safe.
  static std::shared_ptr<const DctPlan> get(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  /// Row-major N x N basis, entry (mu, n).
  std::span<const double> matrix() const noexcept { return matrix_; }

  void forward(std::span<const double> frame, std::span<double> out) const;
  void inverse(std::span<const double> coeffs, std::span<double> out) const;

 private:
  std::size_t n_;
  std::vector<double> matrix_;
};

std::vector<double> dct_n(std::span<const double> frame);
/// Throws std::invalid_argument when coeffs.size() != n.
std::vector<double> idct_n(std::span<const double> coeffs, std::size_t n);
inline std::vector<double> idct_n(std::span<const double> coeffs) {
  return idct_n(coeffs, coeffs.size());
}

Spectrogram stdct(const Waveform& wave, const FrameConfig& cfg);
Waveform istdct(const Spectrogram& spec, int sample_rate = 16000);

}  // namespace vsanet::dsp
