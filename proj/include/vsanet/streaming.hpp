#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsanet/errors.hpp"
#include "vsanet/model.hpp"

namespace vsanet::stream {

struct StreamOutput {
  std::vector<double> samples;  // enhanced samples that became final during the call
  std::vector<double> vad;      // one score per frame processed during the call
};

/// Real-time enhancement session. Samples go in as arbitrary chunks; each
/// output sample is emitted once every window overlapping it has been
/// processed, which is exactly win_len samples after it arrived. The
/// concatenated output equals offline enhance() on the same signal up to
/// floating-point rounding. Memory use is constant in stream length.
template <typename Real>
class StreamSession {
 public:
  /// Throws UnsupportedRate unless sample_rate is 16 kHz.
  explicit StreamSession(ModelParams<Real> params, int sample_rate = kModelSampleRate);
  ~StreamSession();
  StreamSession(StreamSession&&) noexcept;
  StreamSession& operator=(StreamSession&&) noexcept;

  StreamOutput push(std::span<const double> chunk);
  /// As above, after checking the chunk's sample rate.
  StreamOutput push(const dsp::Waveform& chunk);
  /// Processes the end padding and emits the remaining samples so that the
  /// total emitted equals the total ingested. The session is closed afterwards.
  StreamOutput flush();

  std::size_t ingested() const;
  std::size_t emitted() const;
  std::size_t frames_processed() const;
  bool closed() const;
  /// Algorithmic latency in samples (one analysis window).
  std::size_t latency_samples() const;
  /// Number of stored state values; fixed at construction.
  std::size_t state_size() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

/// Streams `wave` through a fresh session in chunks of `chunk_samples`.
template <typename Real>
Enhanced enhance_streaming(const ModelParams<Real>& params, const dsp::Waveform& wave, std::size_t chunk_samples);

/// As above with a chunk-size sequence that is cycled until the input ends.
template <typename Real>
Enhanced enhance_streaming(const ModelParams<Real>& params, const dsp::Waveform& wave,
                           std::span<const std::size_t> chunk_sizes);

struct RtfReport {
  double audio_seconds = 0.0;
  double chunk_ms = 0.0;
  std::size_t chunks = 0;
  std::size_t frames = 0;
  std::size_t parameters = 0;
  std::string precision;
  std::string hardware;
  double processing_seconds = 0.0;
  double rtf = 0.0;

  nlohmann::json to_json() const;
};

/// CPU model and hardware thread count of the host.
std::string hardware_descriptor();

/// Streams `duration_s` of seeded noise in `chunk_ms` chunks and reports the
/// real-time factor (processing time / audio time).
template <typename Real>
RtfReport benchmark_rtf(const ModelParams<Real>& params, double duration_s, double chunk_ms,
                        std::uint64_t seed = 0);

}  // namespace vsanet::stream
