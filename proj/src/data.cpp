#include "vsanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include "vsanet/errors.hpp"
#include "vsanet/parallel.hpp"
#include "vsanet/wav.hpp"

namespace vsanet::data {

namespace fs = std::filesystem;
using dsp::Waveform;

double signal_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double snr_db(std::span<const double> signal, std::span<const double> noise) {
  return 10.0 * std::log10(signal_power(signal) / signal_power(noise));
}

Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr) {
  if (clean.size() != noise.size()) {
    throw std::invalid_argument("mix_at_snr: clean has " + std::to_string(clean.size()) + " samples, noise has " +
                                std::to_string(noise.size()));
  }
  if (clean.sample_rate != noise.sample_rate) throw std::invalid_argument("mix_at_snr: sample rates differ");
  if (!std::isfinite(snr)) throw std::invalid_argument("mix_at_snr: snr_db must be finite");
  const double pc = signal_power(clean.samples);
  const double pn = signal_power(noise.samples);
  if (!(pc > 0.0) || !(pn > 0.0)) throw std::invalid_argument("mix_at_snr: clean and noise need nonzero power");

  Mixture out;
  out.scale = std::sqrt(pc / (pn * std::pow(10.0, snr / 10.0)));
  out.noisy.sample_rate = clean.sample_rate;
  out.noisy.samples.resize(clean.size());
  out.noise.sample_rate = clean.sample_rate;
  out.noise.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out.noisy.samples[i] = clean.samples[i] + out.scale * noise.samples[i];
    out.noise.samples[i] = out.noisy.samples[i] - clean.samples[i];
  }
  return out;
}

std::vector<int> vad_labels(const Waveform& clean, const dsp::FrameConfig& frames, double floor_db) {
  frames.validate();
  if (!(floor_db >= 0.0)) throw std::invalid_argument("vad_labels: floor_db must be non-negative");
  const std::size_t n = clean.size();
  const std::size_t T = frames.frame_count(n);
  const auto pad = static_cast<long>(frames.start_pad());
  std::vector<double> rms(T);
  for (std::size_t t = 0; t < T; ++t) {
    const long start = static_cast<long>(t * frames.hop) - pad;
    const long lo = std::max(start, 0L);
    const long hi = std::min(start + static_cast<long>(frames.win_len), static_cast<long>(n));
    double acc = 0.0;
    for (long i = lo; i < hi; ++i) acc += clean.samples[i] * clean.samples[i];
    rms[t] = std::sqrt(acc / static_cast<double>(frames.win_len));
  }
  const double peak = rms.empty() ? 0.0 : *std::max_element(rms.begin(), rms.end());
  std::vector<int> labels(T, 0);
  if (peak <= 0.0) return labels;
  const double threshold = peak * std::pow(10.0, -floor_db / 20.0);
  for (std::size_t t = 0; t < T; ++t) labels[t] = rms[t] >= threshold ? 1 : 0;
  return labels;
}

dsp::Spectrogram dctirm(const dsp::Spectrogram& s, const dsp::Spectrogram& x, double clip) {
  if (s.bins != x.bins || s.frames != x.frames || s.coeffs.size() != x.coeffs.size()) {
    throw std::invalid_argument("dctirm: spectrogram shapes differ");
  }
  if (!(clip > 0.0)) throw std::invalid_argument("dctirm: clip must be positive");
  dsp::Spectrogram m = x;
  for (std::size_t i = 0; i < m.coeffs.size(); ++i) {
    const double r = std::abs(x.coeffs[i]) >= 1e-8 ? s.coeffs[i] / x.coeffs[i] : 0.0;
    m.coeffs[i] = std::clamp(r, -clip, clip);
  }
  return m;
}

MixtureExample make_example(Waveform clean, Waveform scaled_noise, double snr, const dsp::FrameConfig& frames,
                            double clip) {
  if (clean.size() != scaled_noise.size() || clean.sample_rate != scaled_noise.sample_rate) {
    throw std::invalid_argument("make_example: clean and noise must match in length and rate");
  }
  MixtureExample ex;
  ex.noisy.sample_rate = clean.sample_rate;
  ex.noisy.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) ex.noisy.samples[i] = clean.samples[i] + scaled_noise.samples[i];
  ex.snr_db = snr;
  ex.vad = vad_labels(clean, frames);
  ex.mask_target = dctirm(dsp::stdct(clean, frames), dsp::stdct(ex.noisy, frames), clip);
  ex.clean = std::move(clean);
  ex.noise = std::move(scaled_noise);
  return ex;
}

// ---------------------------------------------------------------------------
// Synthesis

std::string to_string(NoiseType type) {
  switch (type) {
    case NoiseType::kWhite: return "white";
    case NoiseType::kPink: return "pink";
    case NoiseType::kBabble: return "babble";
  }
  return "unknown";
}

NoiseType noise_type_from_string(const std::string& name) {
  if (name == "white") return NoiseType::kWhite;
  if (name == "pink") return NoiseType::kPink;
  if (name == "babble") return NoiseType::kBabble;
  throw std::invalid_argument("unknown noise type '" + name + "' (expected white, pink or babble)");
}

void SynthConfig::validate() const {
  if (num_train + num_val + num_test == 0) throw std::invalid_argument("synth: corpus would be empty");
  if (!(duration_s > 0.0)) throw std::invalid_argument("synth: duration_s must be positive");
  if (snrs_db.empty() || noise_types.empty()) throw std::invalid_argument("synth: need SNRs and noise types");
  if (!(min_gap_s > 0.0)) throw std::invalid_argument("synth: min_gap_s must be positive");
  if (!(0.0 <= min_activity && min_activity < max_activity && max_activity <= 1.0)) {
    throw std::invalid_argument("synth: activity bounds must satisfy 0 <= min < max <= 1");
  }
  dsp::FrameConfig::hamming(label_win, label_hop).validate();
}

nlohmann::json SynthConfig::to_json() const {
  std::vector<std::string> types;
  for (auto t : noise_types) types.push_back(to_string(t));
  return {{"num_train", num_train},       {"num_val", num_val},           {"num_test", num_test},
          {"duration_s", duration_s},     {"snrs_db", snrs_db},           {"noise_types", types},
          {"min_gap_s", min_gap_s},       {"min_activity", min_activity}, {"max_activity", max_activity},
          {"label_win", label_win},       {"label_hop", label_hop}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"num_train",    "num_val",      "num_test",  "duration_s",
                                           "snrs_db",      "noise_types",  "min_gap_s", "min_activity",
                                           "max_activity", "label_win",    "label_hop"};
  if (!j.is_object()) throw std::invalid_argument("synth config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("synth config: unknown key '" + key + "'");
  }
  SynthConfig c;
  try {
    c.num_train = j.value("num_train", c.num_train);
    c.num_val = j.value("num_val", c.num_val);
    c.num_test = j.value("num_test", c.num_test);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.snrs_db = j.value("snrs_db", c.snrs_db);
    if (j.contains("noise_types")) {
      c.noise_types.clear();
      for (const auto& name : j["noise_types"]) c.noise_types.push_back(noise_type_from_string(name.get<std::string>()));
    }
    c.min_gap_s = j.value("min_gap_s", c.min_gap_s);
    c.min_activity = j.value("min_activity", c.min_activity);
    c.max_activity = j.value("max_activity", c.max_activity);
    c.label_win = j.value("label_win", c.label_win);
    c.label_hop = j.value("label_hop", c.label_hop);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// One voiced segment written into out[begin, end).
void voiced_segment(nn::Rng& rng, std::vector<double>& out, std::size_t begin, std::size_t end, double sr) {
  const std::size_t len = end - begin;
  const double f0_start = rng.uniform(100.0, 300.0);
  const double f0_end = std::clamp(f0_start * rng.uniform(0.8, 1.25), 100.0, 300.0);
  const double formant1 = rng.uniform(300.0, 900.0);
  const double formant2 = rng.uniform(900.0, 2500.0);
  const double mod_rate = rng.uniform(2.0, 6.0), mod_phase = rng.uniform(0.0, kTwoPi);
  const std::size_t harmonics = static_cast<std::size_t>(3800.0 / 300.0);
  std::vector<double> phase(harmonics);
  for (auto& p : phase) p = rng.uniform(0.0, kTwoPi);
  const double attack = std::min(0.02 * sr, len / 4.0), release = std::min(0.04 * sr, len / 4.0);
  for (std::size_t i = 0; i < len; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(len);
    const double f0 = f0_start + (f0_end - f0_start) * u;
    double env = 1.0 + 0.3 * std::sin(kTwoPi * mod_rate * i / sr + mod_phase);
    if (i < attack) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * i / attack);
    if (len - i < release) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * (len - i) / release);
    double v = 0.0;
    for (std::size_t k = 0; k < harmonics; ++k) {
      const double fk = f0 * static_cast<double>(k + 1);
      phase[k] += kTwoPi * fk / sr;
      if (fk >= 3800.0) continue;
      const double d1 = (fk - formant1) / 150.0, d2 = (fk - formant2) / 250.0;
      const double gain = (1.0 + 2.0 * std::exp(-d1 * d1) + 1.5 * std::exp(-d2 * d2)) / static_cast<double>(k + 1);
      v += gain * std::sin(phase[k]);
    }
    out[begin + i] = env * v;
  }
}

// RBJ band-pass biquad (constant 0 dB peak gain).
std::vector<double> bandpass(std::span<const double> x, double centre, double q, double sr) {
  const double w = kTwoPi * centre / sr;
  const double alpha = std::sin(w) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w) / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> y(x.size());
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = b0 * x[i] + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = y[i];
  }
  return y;
}

}  // namespace

Waveform synth_speech(nn::Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  const double sr = kModelSampleRate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * sr));
  const auto frames = dsp::FrameConfig::hamming(cfg.label_win, cfg.label_hop);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Waveform w;
    w.samples.assign(n, 0.0);
    std::size_t pos = static_cast<std::size_t>(rng.uniform(0.05, 0.4) * sr);
    while (pos < n) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.25, 0.7) * sr);
      const std::size_t end = std::min(n, pos + len);
      voiced_segment(rng, w.samples, pos, end, sr);
      pos = end + static_cast<std::size_t>(rng.uniform(cfg.min_gap_s, cfg.min_gap_s + 0.3) * sr);
    }
    const auto labels = vad_labels(w, frames);
    const double active =
        labels.empty() ? 0.0 : static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / labels.size();
    if (active < cfg.min_activity || active > cfg.max_activity) continue;
    double peak = 0.0;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    const double gain = rng.uniform(0.3, 0.6) / peak;
    for (double& v : w.samples) v *= gain;
    return w;
  }
  throw std::runtime_error("synth_speech: could not meet the activity bounds; widen them or lengthen utterances");
}

Waveform synth_noise(nn::Rng& rng, NoiseType type, std::size_t samples) {
  const double sr = kModelSampleRate;
  std::vector<double> white(samples);
  for (double& v : white) v = rng.normal();
  Waveform w;
  switch (type) {
    case NoiseType::kWhite:
      w.samples = std::move(white);
      break;
    case NoiseType::kPink: {
      // Paul Kellet's refined pink filter.
      double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
      w.samples.resize(samples);
      for (std::size_t i = 0; i < samples; ++i) {
        const double x = white[i];
        b0 = 0.99886 * b0 + x * 0.0555179;
        b1 = 0.99332 * b1 + x * 0.0750759;
        b2 = 0.96900 * b2 + x * 0.1538520;
        b3 = 0.86650 * b3 + x * 0.3104856;
        b4 = 0.55000 * b4 + x * 0.5329522;
        b5 = -0.7616 * b5 - x * 0.0168980;
        w.samples[i] = (b0 + b1 + b2 + b3 + b4 + b5 + b6 + x * 0.5362) * 0.2;
        b6 = x * 0.115926;
      }
      break;
    }
    case NoiseType::kBabble: {
      // Several speech-band noise bands with independent syllabic-rate
      // amplitude modulation.
      w.samples.assign(samples, 0.0);
      for (int talker = 0; talker < 4; ++talker) {
        std::vector<double> src(samples);
        for (double& v : src) v = rng.normal();
        const auto band = bandpass(src, rng.uniform(400.0, 2000.0), rng.uniform(0.8, 2.0), sr);
        const double rate = rng.uniform(2.0, 6.0), phase = rng.uniform(0.0, kTwoPi);
        for (std::size_t i = 0; i < samples; ++i) {
          w.samples[i] += band[i] * (1.0 + 0.8 * std::sin(kTwoPi * rate * i / sr + phase));
        }
      }
      for (std::size_t i = 0; i < samples; ++i) w.samples[i] += 0.05 * white[i];
      break;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json ManifestItem::to_json() const {
  return {{"id", id},
          {"split", split},
          {"seed", seed},
          {"snr_db", snr_db},
          {"noise_type", noise_type},
          {"clean", clean.generic_string()},
          {"noise", noise.generic_string()},
          {"noisy", noisy.generic_string()}};
}

ManifestItem ManifestItem::from_json(const nlohmann::json& j) {
  ManifestItem it;
  try {
    it.id = j.at("id").get<std::string>();
    it.split = j.at("split").get<std::string>();
    it.seed = j.value("seed", std::uint64_t{0});
    it.snr_db = j.value("snr_db", 0.0);
    it.noise_type = j.value("noise_type", std::string{});
    it.clean = j.at("clean").get<std::string>();
    it.noise = j.value("noise", std::string{});
    it.noisy = j.value("noisy", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("manifest record: ") + e.what());
  }
  return it;
}

std::vector<ManifestItem> Manifest::split(const std::string& name) const {
  std::vector<ManifestItem> out;
  for (const auto& it : items) {
    if (it.split == name) out.push_back(it);
  }
  return out;
}

void Manifest::validate() const {
  std::set<std::string> ids;
  std::set<std::string> clean_files;
  for (const auto& it : items) {
    if (it.split != "train" && it.split != "val" && it.split != "test") {
      throw std::invalid_argument("manifest item '" + it.id + "' has unknown split '" + it.split + "'");
    }
    if (!ids.insert(it.id).second) throw std::invalid_argument("manifest item '" + it.id + "' appears twice");
    if (!clean_files.insert(it.clean.lexically_normal().string()).second) {
      throw std::invalid_argument("manifest file " + it.clean.string() + " is listed by two items");
    }
  }
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& it : manifest.items) out << it.to_json().dump() << '\n';
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto it = ManifestItem::from_json(j);
    for (auto* p : {&it.clean, &it.noise, &it.noisy}) {
      if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    m.items.push_back(std::move(it));
  }
  m.validate();
  return m;
}

std::pair<Waveform, Waveform> synth_item(const SynthConfig& cfg, std::uint64_t seed, NoiseType noise_type,
                                         double snr) {
  nn::Rng root(seed);
  nn::Rng speech_rng = root.split("speech");
  nn::Rng noise_rng = root.split("noise");
  Waveform clean = synth_speech(speech_rng, cfg);
  // Round to the stored precision first so the SNR recomputed from the files
  // matches the requested one.
  for (double& v : clean.samples) v = static_cast<float>(v);
  Waveform noise = synth_noise(noise_rng, noise_type, clean.size());
  for (double& v : noise.samples) v = static_cast<float>(v);
  const double scale = mix_at_snr(clean, noise, snr).scale;
  for (double& v : noise.samples) v = static_cast<float>(v * scale);
  return {std::move(clean), std::move(noise)};
}

Manifest synth_dataset(const SynthConfig& cfg, std::uint64_t seed, const fs::path& out_dir, std::size_t threads) {
  cfg.validate();
  const nn::Rng root(seed);
  Manifest m;
  auto add_split = [&](const std::string& split, std::size_t count) {
    nn::Rng split_rng = root.split(split);
    for (std::size_t i = 0; i < count; ++i) {
      ManifestItem it;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%04zu", split.c_str(), i);
      it.id = id;
      it.split = split;
      it.seed = split_rng.next_u64();
      it.snr_db = cfg.snrs_db[i % cfg.snrs_db.size()];
      it.noise_type = to_string(cfg.noise_types[split_rng.below(cfg.noise_types.size())]);
      it.clean = fs::path(split) / (it.id + "_clean.wav");
      it.noise = fs::path(split) / (it.id + "_noise.wav");
      it.noisy = fs::path(split) / (it.id + "_noisy.wav");
      m.items.push_back(std::move(it));
    }
  };
  add_split("train", cfg.num_train);
  add_split("val", cfg.num_val);
  add_split("test", cfg.num_test);

  for (const char* split : {"train", "val", "test"}) fs::create_directories(out_dir / split);
  parallel_for(
      m.items.size(),
      [&](std::size_t i) {
        const auto& it = m.items[i];
        auto [clean, noise] = synth_item(cfg, it.seed, noise_type_from_string(it.noise_type), it.snr_db);
        Waveform noisy = clean;
        for (std::size_t k = 0; k < noisy.size(); ++k) noisy.samples[k] += noise.samples[k];
        io::write_wav(out_dir / it.clean, clean);
        io::write_wav(out_dir / it.noise, noise);
        io::write_wav(out_dir / it.noisy, noisy);
      },
      threads);

  write_manifest(out_dir / "manifest.jsonl", m);
  std::ofstream(out_dir / "synth_config.json") << cfg.to_json().dump(2) << '\n';
  for (auto& it : m.items)
    for (fs::path* p : {&it.clean, &it.noise, &it.noisy}) *p = out_dir / *p;
  return m;
}

MixtureExample load_example(const ManifestItem& item, const dsp::FrameConfig& frames, double clip) {
  Waveform clean = io::read_wav(item.clean);
  Waveform noise;
  if (!item.noise.empty()) {
    noise = io::read_wav(item.noise);
  } else if (!item.noisy.empty()) {
    noise = io::read_wav(item.noisy);
    if (noise.size() != clean.size()) throw UnsupportedFormat("item '" + item.id + "': noisy/clean length mismatch");
    for (std::size_t i = 0; i < noise.size(); ++i) noise.samples[i] -= clean.samples[i];
  } else {
    throw std::invalid_argument("item '" + item.id + "' has neither a noise nor a noisy file");
  }
  if (noise.size() != clean.size()) throw UnsupportedFormat("item '" + item.id + "': noise/clean length mismatch");
  return make_example(std::move(clean), std::move(noise), item.snr_db, frames, clip);
}

}  // namespace vsanet::data
