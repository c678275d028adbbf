#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsanet/nn/rng.hpp"
#include "vsanet/stdct.hpp"

namespace vsanet::data {

/// Mean of squared samples.
double signal_power(std::span<const double> x);
/// 10 log10(P_signal / P_noise) over the full length.
double snr_db(std::span<const double> signal, std::span<const double> noise);

struct Mixture {
  dsp::Waveform noisy;
  double scale = 1.0;   // gain applied to the noise
  dsp::Waveform noise;  // noisy - clean, so the decomposition is exact
};

/// Scales `noise` so the clean-to-noise power ratio equals snr_db and adds it
/// to `clean`. `noise` holds the realised residual noisy - clean (equal to
/// scale * noise up to one rounding per sample). Throws std::invalid_argument
/// on length/rate mismatch or a zero-power input.
Mixture mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr_db);

/// Frame t is active iff the plain RMS over its sample span (start padding
/// counts as zeros) is within floor_db of the loudest frame.
std::vector<int> vad_labels(const dsp::Waveform& clean, const dsp::FrameConfig& frames,
                            double floor_db = 40.0);

/// Ratio mask S / X (0 where |X| < 1e-8), clamped to [-clip, clip].
dsp::Spectrogram dctirm(const dsp::Spectrogram& s, const dsp::Spectrogram& x,
                        double clip = std::numeric_limits<double>::infinity());

struct MixtureExample {
  dsp::Waveform clean;
  dsp::Waveform noise;  // already scaled
  dsp::Waveform noisy;  // clean + noise
  double snr_db = 0.0;
  std::vector<int> vad;
  dsp::Spectrogram mask_target;
};

/// Builds an example from clean speech and noise that is already scaled.
MixtureExample make_example(dsp::Waveform clean, dsp::Waveform scaled_noise, double snr_db,
                            const dsp::FrameConfig& frames, double clip);

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class NoiseType { kWhite, kPink, kBabble };
std::string to_string(NoiseType type);
NoiseType noise_type_from_string(const std::string& name);

struct SynthConfig {
  std::size_t num_train = 50;
  std::size_t num_val = 10;
  std::size_t num_test = 10;
  double duration_s = 2.0;
  std::vector<double> snrs_db{0, 5, 10, 15};
  std::vector<NoiseType> noise_types{NoiseType::kWhite, NoiseType::kPink, NoiseType::kBabble};
  double min_gap_s = 0.3;
  double min_activity = 0.4;
  double max_activity = 0.9;
  std::size_t label_win = 512;
  std::size_t label_hop = 128;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Harmonic "speech": voiced segments with gliding f0 in [100, 300] Hz and
/// formant-shaped harmonics, separated by exact silences of at least
/// min_gap_s. Resamples until the labelled activity fraction is in range.
dsp::Waveform synth_speech(nn::Rng& rng, const SynthConfig& cfg);
/// Unit-variance-ish noise of the requested colour.
dsp::Waveform synth_noise(nn::Rng& rng, NoiseType type, std::size_t samples);

struct ManifestItem {
  std::string id;
  std::string split;  // train | val | test
  std::uint64_t seed = 0;
  double snr_db = 0.0;
  std::string noise_type;
  // Relative to the manifest directory when written, absolute after reading.
  std::filesystem::path clean, noise, noisy;

  nlohmann::json to_json() const;
  static ManifestItem from_json(const nlohmann::json& j);
};

struct Manifest {
  std::vector<ManifestItem> items;

  std::vector<ManifestItem> split(const std::string& name) const;
  /// Unique ids, known split names, no item in two splits.
  void validate() const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
/// Line-delimited JSON; relative paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);

/// Clean speech and scaled noise for one item, regenerated from its seed.
std::pair<dsp::Waveform, dsp::Waveform> synth_item(const SynthConfig& cfg, std::uint64_t seed,
                                                   NoiseType noise, double snr_db);

/// Generates the corpus under out_dir (float32 WAVs plus manifest.jsonl).
/// Output bytes depend only on cfg and seed. The returned manifest holds
/// paths under out_dir, as read_manifest would.
Manifest synth_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                       std::size_t threads = 0);

/// Reads an item's clean and noise files and rebuilds noisy = clean + noise.
MixtureExample load_example(const ManifestItem& item, const dsp::FrameConfig& frames, double clip);

}  // namespace vsanet::data
