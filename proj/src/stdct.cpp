#include "vsanet/stdct.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vsanet::dsp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) {
    throw std::invalid_argument("waveform sample rate must be positive");
  }
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("waveform contains non-finite samples");
  }
}

FrameConfig FrameConfig::hamming(std::size_t win_len, std::size_t hop) {
  FrameConfig cfg;
  cfg.win_len = win_len;
  cfg.hop = hop;
  cfg.window.resize(win_len);
  for (std::size_t n = 0; n < win_len; ++n) {
    cfg.window[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                           static_cast<double>(win_len));
  }
  cfg.validate();
  return cfg;
}

FrameConfig FrameConfig::rectangular(std::size_t win_len, std::size_t hop) {
  FrameConfig cfg;
  cfg.win_len = win_len;
  cfg.hop = hop;
  cfg.window.assign(win_len, 1.0);
  cfg.validate();
  return cfg;
}

void FrameConfig::validate() const {
  if (win_len == 0) throw std::invalid_argument("frame config: win_len must be positive");
  if (hop == 0 || hop > win_len) {
    throw std::invalid_argument("frame config: hop must satisfy 0 < hop <= win_len");
  }
  if (window.size() != win_len) {
    throw std::invalid_argument("frame config: window length " + std::to_string(window.size()) +
                                " != win_len " + std::to_string(win_len));
  }
  for (double w : window) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("frame config: window weights must be finite and >= 0");
    }
  }
}

std::size_t FrameConfig::frame_count(std::size_t len) const {
  // ceil((len + start_pad - win_len) / hop) + 1, clamped to one frame.
  if (len <= hop) return 1;
  return (len - hop + hop - 1) / hop + 1;
}

DctPlan::DctPlan(std::size_t n) : n_(n), matrix_(n * n) {
  if (n == 0) throw std::invalid_argument("DCT size must be positive");
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t mu = 0; mu < n; ++mu) {
    const double c = mu == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double arg = std::numbers::pi * static_cast<double>(mu) *
                         static_cast<double>(2 * k + 1) / static_cast<double>(2 * n);
      matrix_[mu * n + k] = c * scale * std::cos(arg);
    }
  }
}

std::shared_ptr<const DctPlan> DctPlan::get(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const DctPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_shared<const DctPlan>(n);
  return slot;
}

void DctPlan::forward(std::span<const double> frame, std::span<double> out) const {
  if (frame.size() != n_ || out.size() != n_) {
    throw std::invalid_argument("dct: expected length " + std::to_string(n_) + ", got " +
                                std::to_string(frame.size()));
  }
  Eigen::Map<const RowMat> g(matrix_.data(), n_, n_);
  Eigen::Map<const Eigen::VectorXd> x(frame.data(), n_);
  Eigen::Map<Eigen::VectorXd> y(out.data(), n_);
  y.noalias() = g * x;
}

void DctPlan::inverse(std::span<const double> coeffs, std::span<double> out) const {
  if (coeffs.size() != n_ || out.size() != n_) {
    throw std::invalid_argument("idct: expected length " + std::to_string(n_) + ", got " +
                                std::to_string(coeffs.size()));
  }
  Eigen::Map<const RowMat> g(matrix_.data(), n_, n_);
  Eigen::Map<const Eigen::VectorXd> x(coeffs.data(), n_);
  Eigen::Map<Eigen::VectorXd> y(out.data(), n_);
  y.noalias() = g.transpose() * x;
}

std::vector<double> dct_n(std::span<const double> frame) {
  if (frame.empty()) throw std::invalid_argument("dct: empty frame");
  std::vector<double> out(frame.size());
  DctPlan::get(frame.size())->forward(frame, out);
  return out;
}

std::vector<double> idct_n(std::span<const double> coeffs, std::size_t n) {
  if (n == 0) throw std::invalid_argument("idct: empty input");
  if (coeffs.size() != n) {
    throw std::invalid_argument("idct: length " + std::to_string(coeffs.size()) +
                                " does not match DCT size " + std::to_string(n));
  }
  std::vector<double> out(n);
  DctPlan::get(n)->inverse(coeffs, out);
  return out;
}

Spectrogram stdct(const Waveform& wave, const FrameConfig& cfg) {
  cfg.validate();
  if (wave.samples.empty()) throw std::invalid_argument("stdct: empty waveform");
  wave.validate();

  const std::size_t n = cfg.win_len;
  const std::size_t frames = cfg.frame_count(wave.size());
  const std::size_t pad = cfg.start_pad();

  // Windowed frames laid out column-wise: framed(k, t).
  RowMat framed(n, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t p = t * cfg.hop + k;
      double v = 0.0;
      if (p >= pad && p - pad < wave.size()) v = wave.samples[p - pad];
      framed(k, t) = v * cfg.window[k];
    }
  }

  auto plan = DctPlan::get(n);
  Eigen::Map<const RowMat> g(plan->matrix().data(), n, n);

  Spectrogram spec;
  spec.bins = n;
  spec.frames = frames;
  spec.coeffs.resize(n * frames);
  spec.frame_config = cfg;
  spec.original_len = wave.size();
  Eigen::Map<RowMat> out(spec.coeffs.data(), n, frames);
  out.noalias() = g * framed;
  return spec;
}

Waveform istdct(const Spectrogram& spec, int sample_rate) {
  const FrameConfig& cfg = spec.frame_config;
  cfg.validate();
  if (spec.frames == 0 || spec.original_len == 0) {
    throw std::invalid_argument("istdct: zero-length spectrogram");
  }
  if (spec.bins != cfg.win_len || spec.coeffs.size() != spec.bins * spec.frames) {
    throw std::invalid_argument("istdct: spectrogram shape does not match its frame config");
  }

  const std::size_t n = cfg.win_len;
  auto plan = DctPlan::get(n);
  Eigen::Map<const RowMat> g(plan->matrix().data(), n, n);
  Eigen::Map<const RowMat> coeffs(spec.coeffs.data(), n, spec.frames);
  const RowMat frames = g.transpose() * coeffs;

  const std::size_t total = (spec.frames - 1) * cfg.hop + n;
  std::vector<double> acc(total, 0.0);
  std::vector<double> env(total, 0.0);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const std::size_t base = t * cfg.hop;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = cfg.window[k];
      acc[base + k] += w * frames(k, t);
      env[base + k] += w * w;
    }
  }

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(spec.original_len);
  const std::size_t pad = cfg.start_pad();
  for (std::size_t i = 0; i < spec.original_len; ++i) {
    const std::size_t p = i + pad;
    if (p >= total) break;
    const double e = env[p] < kEnvelopeFloor ? 1.0 : env[p];
    out.samples[i] = acc[p] / e;
  }
  return out;
}

}  // namespace vsanet::dsp
