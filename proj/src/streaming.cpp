#include "vsanet/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "vsanet/csa.hpp"
#include "vsanet/nn/ops.hpp"
#include "vsanet/nn/rng.hpp"

namespace vsanet::stream {

using nn::Shape;
using nn::Tensor;

namespace {

// The last `len` frames of a [C, F] feature stream, time fastest, starting
// out as zeros so that it reproduces the causal zero padding of the offline
// ops. The newest frame is at index len - 1.
template <typename Real>
struct History {
  std::size_t channels = 0, freq = 0, len = 0;
  std::vector<Real> data;

  History() = default;
  History(std::size_t c, std::size_t f, std::size_t l) : channels(c), freq(f), len(l), data(c * f * l, Real{0}) {}

  void push(const Tensor<Real>& frame) {
    const auto src = frame.data();
    if (src.size() != channels * freq) throw std::logic_error("stream history: frame size mismatch");
    for (std::size_t k = 0; k < channels * freq; ++k) {
      Real* row = data.data() + k * len;
      std::copy(row + 1, row + len, row);
      row[len - 1] = src[k];
    }
  }

  Tensor<Real> window() const { return Tensor<Real>(Shape{1, channels, freq, len}, data); }
};

// [1, C, F, K] -> its newest frame [1, C, F, 1].
template <typename Real>
Tensor<Real> newest(const Tensor<Real>& y) {
  const std::size_t C = y.dim(1), F = y.dim(2), K = y.dim(3);
  const auto src = y.data();
  std::vector<Real> out(C * F);
  for (std::size_t k = 0; k < C * F; ++k) out[k] = src[k * K + K - 1];
  return Tensor<Real>(Shape{1, C, F, 1}, std::move(out));
}

std::size_t count_values(const auto& histories) {
  std::size_t n = 0;
  for (const auto& h : histories) n += h.data.size();
  return n;
}

}  // namespace

template <typename Real>
struct StreamSession<Real>::State {
  ModelParams<Real> params;
  dsp::FrameConfig frames;
  std::shared_ptr<const dsp::DctPlan> plan;
  std::size_t win = 0, hop = 0, pad = 0;

  // Per-layer time histories.
  std::vector<History<Real>> encoder;
  std::vector<History<Real>> skip_csa;
  std::vector<History<Real>> decoder;
  std::vector<History<Real>> decoder_csa;
  History<Real> vad_transform;
  std::vector<Tensor<Real>> se_hidden;
  std::vector<Tensor<Real>> vad_hidden;

  // Sample side, 64-bit: the padded input window being filled and the
  // overlap-add accumulators for padded positions [next * hop, next * hop + win).
  std::vector<double> input;
  std::size_t fill = 0;
  std::vector<double> acc, env;
  std::size_t next = 0;  // frames processed

  std::size_t ingested = 0;
  std::size_t emitted = 0;
  bool closed = false;

  explicit State(ModelParams<Real> p) : params(std::move(p)) {
    const ModelConfig& c = params.config;
    c.validate();
    frames = c.frame_config();
    win = frames.win_len;
    hop = frames.hop;
    pad = frames.start_pad();
    plan = dsp::DctPlan::get(win);

    const std::size_t kt = c.conv_kernel[1];
    std::size_t ch = 1, f = c.dct_size;
    std::vector<std::pair<std::size_t, std::size_t>> skip_shapes;
    for (std::size_t i = 0; i < c.depth(); ++i) {
      encoder.emplace_back(ch, f, kt);
      ch = c.encoder_channels[i];
      f = nn::conv_out_freq(f, c.conv_kernel[0], c.conv_options());
      skip_shapes.emplace_back(ch, f);
    }
    vad_transform = History<Real>(ch, f, kt);
    const std::size_t csa_kt = c.csa_kernel[1];
    std::size_t d_ch = ch;
    for (std::size_t j = 0; j < c.depth(); ++j) {
      const auto [s_ch, s_f] = skip_shapes[c.depth() - 1 - j];
      skip_csa.emplace_back(2, s_f, csa_kt);
      decoder.emplace_back(d_ch + s_ch, s_f, kt);
      d_ch = c.decoder_channels[j];
      if (j + 1 < c.depth()) {
        decoder_csa.emplace_back(2, nn::tconv_out_freq(s_f, c.conv_kernel[0], c.tconv_options()), csa_kt);
      }
    }
    for (std::size_t h : c.se_gru_hidden) se_hidden.emplace_back(Shape{1, h});
    for (std::size_t h : c.vad_gru_hidden) vad_hidden.emplace_back(Shape{1, h});

    input.assign(win, 0.0);
    fill = pad;
    acc.assign(win, 0.0);
    env.assign(win, 0.0);
  }

  std::size_t state_size() const {
    std::size_t n = count_values(encoder) + count_values(skip_csa) + count_values(decoder) +
                    count_values(decoder_csa) + vad_transform.data.size();
    for (const auto& h : se_hidden) n += h.size();
    for (const auto& h : vad_hidden) n += h.size();
    return n + input.size() + acc.size() + env.size();
  }

  Tensor<Real> csa_step(History<Real>& hist, const CsaParams<Real>& p, const Tensor<Real>& u) {
    hist.push(nn::channel_pool(u));
    const nn::Conv2dParams<Real> conv{p.weight, p.bias};
    const auto sam = nn::sigmoid(newest(nn::conv2d_causal(hist.window(), conv, nn::Conv2dOptions{1, (p.kernel_f() - 1) / 2})));
    return nn::mul_broadcast_channels(u, sam);
  }

  Tensor<Real> gru_step(const Tensor<Real>& x, const nn::GruParams<Real>& g, Tensor<Real>& h) {
    const auto y = nn::gru(x, g, h);
    h = Tensor<Real>(Shape{1, y.dim(2)}, std::vector<Real>(y.data().begin(), y.data().end()));
    return y;
  }

  // One frame of the network: noisy coefficients [F] -> mask [F], VAD score.
  double network(std::span<const double> coeffs, std::vector<double>& mask) {
    const ModelConfig& c = params.config;
    const auto conv_opt = c.conv_options();
    const auto tconv_opt = c.tconv_options();
    const auto bn = nn::BnMode::kEval;
    const std::size_t depth = c.depth();

    Tensor<Real> h(Shape{1, 1, win, 1});
    std::transform(coeffs.begin(), coeffs.end(), h.data().begin(), [](double v) { return static_cast<Real>(v); });

    std::vector<Tensor<Real>> skips;
    for (std::size_t i = 0; i < depth; ++i) {
      const auto& block = params.encoder[i];
      encoder[i].push(h);
      const auto y = newest(nn::conv2d_causal(encoder[i].window(), block.conv, conv_opt));
      h = nn::prelu(nn::batch_norm2d(y, block.bn, bn), block.prelu);
      skips.push_back(h);
    }
    const std::size_t channels = h.dim(1), freq = h.dim(2);

    Tensor<Real> r = nn::to_frames(h);
    for (std::size_t i = 0; i < params.se_gru.size(); ++i) r = gru_step(r, params.se_gru[i], se_hidden[i]);
    Tensor<Real> d = nn::from_frames(nn::linear(r, params.se_linear), channels, freq);

    for (std::size_t j = 0; j < depth; ++j) {
      const auto skip = csa_step(skip_csa[j], params.skip_csa[j], skips[depth - 1 - j]);
      const auto& block = params.decoder[j];
      decoder[j].push(nn::concat_channels(d, skip));
      const auto y = nn::batch_norm2d(newest(nn::tconv2d_causal(decoder[j].window(), block.conv, tconv_opt)),
                                      block.bn, bn);
      if (j + 1 < depth) {
        d = csa_step(decoder_csa[j], params.decoder_csa[j], nn::prelu(y, block.prelu));
      } else {
        d = nn::scale(nn::tanh(y), static_cast<Real>(c.mask_clip));
      }
    }
    const auto m = d.data();
    mask.assign(m.begin(), m.end());

    const auto& vt = params.vad_transform;
    vad_transform.push(h);
    const auto vy = newest(nn::conv2d_causal(vad_transform.window(), vt.conv, conv_opt));
    Tensor<Real> v = nn::to_frames(nn::prelu(nn::batch_norm2d(vy, vt.bn, bn), vt.prelu));
    for (std::size_t i = 0; i < params.vad_gru.size(); ++i) v = gru_step(v, params.vad_gru[i], vad_hidden[i]);
    return static_cast<double>(nn::sigmoid(nn::linear(v, params.vad_linear)).item());
  }

  // Analyses the full input window, synthesises its enhanced frame into the
  // accumulators and emits the positions no later frame can touch.
  void process_frame(StreamOutput& out, std::size_t emit_limit) {
    const auto g = plan->matrix();
    std::vector<double> windowed(win), coeffs(win, 0.0);
    for (std::size_t k = 0; k < win; ++k) windowed[k] = input[k] * frames.window[k];
    for (std::size_t m = 0; m < win; ++m) {
      double s = 0.0;
      for (std::size_t k = 0; k < win; ++k) s += g[m * win + k] * windowed[k];
      coeffs[m] = s;
    }

    std::vector<double> mask;
    out.vad.push_back(network(coeffs, mask));
    for (std::size_t m = 0; m < win; ++m) coeffs[m] *= mask[m];

    std::vector<double> frame(win, 0.0);
    for (std::size_t m = 0; m < win; ++m) {
      const double cm = coeffs[m];
      const double* row = g.data() + m * win;
      for (std::size_t k = 0; k < win; ++k) frame[k] += row[k] * cm;
    }
    for (std::size_t k = 0; k < win; ++k) {
      const double w = frames.window[k];
      acc[k] += w * frame[k];
      env[k] += w * w;
    }

    // Positions [next * hop, (next + 1) * hop) are now final.
    const std::size_t base = next * hop;
    for (std::size_t k = 0; k < hop; ++k) {
      const std::size_t p = base + k;
      if (p < pad) continue;
      if (p - pad >= emit_limit) break;
      out.samples.push_back(acc[k] / (env[k] < dsp::kEnvelopeFloor ? 1.0 : env[k]));
      ++emitted;
    }
    std::copy(acc.begin() + hop, acc.end(), acc.begin());
    std::copy(env.begin() + hop, env.end(), env.begin());
    std::fill(acc.end() - hop, acc.end(), 0.0);
    std::fill(env.end() - hop, env.end(), 0.0);
    std::copy(input.begin() + hop, input.end(), input.begin());
    fill -= hop;
    ++next;
  }
};

template <typename Real>
StreamSession<Real>::StreamSession(ModelParams<Real> params, int sample_rate) {
  if (sample_rate != kModelSampleRate) throw UnsupportedRate(sample_rate);
  s_ = std::make_unique<State>(std::move(params));
}

template <typename Real>
StreamSession<Real>::~StreamSession() = default;
template <typename Real>
StreamSession<Real>::StreamSession(StreamSession&&) noexcept = default;
template <typename Real>
StreamSession<Real>& StreamSession<Real>::operator=(StreamSession&&) noexcept = default;

template <typename Real>
StreamOutput StreamSession<Real>::push(std::span<const double> chunk) {
  if (s_->closed) throw std::logic_error("StreamSession::push: session already flushed");
  nn::NoGradGuard no_grad;
  StreamOutput out;
  auto& s = *s_;
  for (double v : chunk) {
    if (!std::isfinite(v)) throw std::invalid_argument("StreamSession::push: non-finite sample");
    s.input[s.fill++] = v;
    ++s.ingested;
    if (s.fill == s.win) s.process_frame(out, s.ingested);
  }
  return out;
}

template <typename Real>
StreamOutput StreamSession<Real>::push(const dsp::Waveform& chunk) {
  if (chunk.sample_rate != kModelSampleRate) throw UnsupportedRate(chunk.sample_rate);
  return push(std::span<const double>(chunk.samples));
}

template <typename Real>
StreamOutput StreamSession<Real>::flush() {
  if (s_->closed) throw std::logic_error("StreamSession::flush: session already flushed");
  nn::NoGradGuard no_grad;
  StreamOutput out;
  auto& s = *s_;
  s.closed = true;
  if (s.ingested == 0) return out;
  const std::size_t total = s.frames.frame_count(s.ingested);
  while (s.next < total) {
    std::fill(s.input.begin() + static_cast<std::ptrdiff_t>(s.fill), s.input.end(), 0.0);
    s.fill = s.win;
    s.process_frame(out, s.ingested);
  }
  // Tail positions covered only by frames past the end keep a partial
  // envelope, exactly as in offline synthesis.
  for (std::size_t k = 0; s.emitted < s.ingested && k < s.win; ++k) {
    const std::size_t p = s.next * s.hop + k;
    if (p < s.pad) continue;
    out.samples.push_back(s.acc[k] / (s.env[k] < dsp::kEnvelopeFloor ? 1.0 : s.env[k]));
    ++s.emitted;
  }
  return out;
}

template <typename Real>
std::size_t StreamSession<Real>::ingested() const {
  return s_->ingested;
}
template <typename Real>
std::size_t StreamSession<Real>::emitted() const {
  return s_->emitted;
}
template <typename Real>
std::size_t StreamSession<Real>::frames_processed() const {
  return s_->next;
}
template <typename Real>
bool StreamSession<Real>::closed() const {
  return s_->closed;
}
template <typename Real>
std::size_t StreamSession<Real>::latency_samples() const {
  return s_->win;
}
template <typename Real>
std::size_t StreamSession<Real>::state_size() const {
  return s_->state_size();
}

template <typename Real>
Enhanced enhance_streaming(const ModelParams<Real>& params, const dsp::Waveform& wave,
                           std::span<const std::size_t> chunk_sizes) {
  if (chunk_sizes.empty() || std::find(chunk_sizes.begin(), chunk_sizes.end(), 0) != chunk_sizes.end()) {
    throw std::invalid_argument("enhance_streaming: chunk sizes must be positive");
  }
  StreamSession<Real> session(params, wave.sample_rate);
  Enhanced out;
  out.audio.sample_rate = wave.sample_rate;
  auto take = [&](StreamOutput&& o) {
    out.audio.samples.insert(out.audio.samples.end(), o.samples.begin(), o.samples.end());
    out.vad.insert(out.vad.end(), o.vad.begin(), o.vad.end());
  };
  std::size_t pos = 0, k = 0;
  while (pos < wave.size()) {
    const std::size_t n = std::min(chunk_sizes[k++ % chunk_sizes.size()], wave.size() - pos);
    take(session.push(std::span<const double>(wave.samples).subspan(pos, n)));
    pos += n;
  }
  take(session.flush());
  return out;
}

template <typename Real>
Enhanced enhance_streaming(const ModelParams<Real>& params, const dsp::Waveform& wave, std::size_t chunk_samples) {
  const std::size_t sizes[] = {chunk_samples};
  return enhance_streaming(params, wave, std::span<const std::size_t>(sizes));
}

nlohmann::json RtfReport::to_json() const {
  return {{"audio_seconds", audio_seconds}, {"chunk_ms", chunk_ms},
          {"chunks", chunks},               {"frames", frames},
          {"parameters", parameters},       {"precision", precision},
          {"hardware", hardware},           {"processing_seconds", processing_seconds},
          {"rtf", rtf}};
}

std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.starts_with("model name")) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

template <typename Real>
RtfReport benchmark_rtf(const ModelParams<Real>& params, double duration_s, double chunk_ms, std::uint64_t seed) {
  if (!(duration_s > 0.0) || !(chunk_ms > 0.0)) throw std::invalid_argument("benchmark_rtf: duration and chunk must be positive");
  const auto samples = static_cast<std::size_t>(duration_s * kModelSampleRate);
  const auto chunk = std::max<std::size_t>(1, static_cast<std::size_t>(chunk_ms * kModelSampleRate / 1000.0));
  nn::Rng rng(seed);
  std::vector<double> audio(samples);
  for (auto& v : audio) v = 0.1 * rng.normal();

  RtfReport r;
  r.audio_seconds = static_cast<double>(samples) / kModelSampleRate;
  r.chunk_ms = chunk_ms;
  r.parameters = params.trainable_count();
  r.precision = sizeof(Real) == 4 ? "float32" : "float64";
  r.hardware = hardware_descriptor();

  StreamSession<Real> session(params);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t pos = 0; pos < samples; pos += chunk) {
    session.push(std::span<const double>(audio).subspan(pos, std::min(chunk, samples - pos)));
    ++r.chunks;
  }
  session.flush();
  const auto t1 = std::chrono::steady_clock::now();
  r.frames = session.frames_processed();
  r.processing_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.rtf = r.processing_seconds / r.audio_seconds;
  return r;
}

#define VSANET_INSTANTIATE_STREAM(Real)                                                                 \
  template class StreamSession<Real>;                                                                   \
  template Enhanced enhance_streaming(const ModelParams<Real>&, const dsp::Waveform&, std::size_t);     \
  template Enhanced enhance_streaming(const ModelParams<Real>&, const dsp::Waveform&,                   \
                                      std::span<const std::size_t>);                                    \
  template RtfReport benchmark_rtf(const ModelParams<Real>&, double, double, std::uint64_t);

VSANET_INSTANTIATE_STREAM(float)
VSANET_INSTANTIATE_STREAM(double)

#undef VSANET_INSTANTIATE_STREAM

}  // namespace vsanet::stream
