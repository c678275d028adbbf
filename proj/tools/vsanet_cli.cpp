#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vsanet/data.hpp"
#include "vsanet/errors.hpp"
#include "vsanet/eval.hpp"
#include "vsanet/model.hpp"
#include "vsanet/streaming.hpp"
#include "vsanet/training.hpp"
#include "vsanet/wav.hpp"

namespace fs = std::filesystem;
using namespace vsanet;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UnsupportedFormat(path.string() + ": " + e.what());
  }
}

// "toy" and "default" name the built-in configurations; anything else is a
// JSON file holding either a ModelConfig object or a {"model": {...}} bundle.
ModelConfig model_config_arg(const std::string& arg) {
  if (arg == "toy") return ModelConfig::toy();
  if (arg == "default") return ModelConfig{};
  const auto j = read_json_file(arg);
  if (j.is_object() && j.contains("model")) {
    const auto& m = j["model"];
    if (m.is_string()) return model_config_arg(m.get<std::string>());
    return ModelConfig::from_json(m);
  }
  return ModelConfig::from_json(j);
}

void require_finite(std::span<const double> xs, const char* what) {
  for (double v : xs) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + " contains a non-finite value");
  }
}

void emit(const json& record) { std::cout << record.dump() << '\n' << std::flush; }

// Raw little-endian PCM16 on stdin/stdout.
std::vector<double> decode_pcm16(const char* bytes, std::size_t n) {
  std::vector<double> out(n / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto lo = static_cast<std::uint8_t>(bytes[2 * i]);
    const auto hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
    out[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8))) / 32768.0;
  }
  return out;
}

void write_pcm16(std::span<const double> xs) {
  std::string bytes(xs.size() * 2, '\0');
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double s = std::clamp(std::round(xs[i] * 32768.0), -32768.0, 32767.0);
    const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(s));
    bytes[2 * i] = static_cast<char>(u & 0xff);
    bytes[2 * i + 1] = static_cast<char>(u >> 8);
  }
  std::cout.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct EnhanceArgs {
  std::string in, out, checkpoint;
  bool stream = false;
  double chunk_ms = 10.0;
  bool pcm16 = false;
};

int run_enhance(const EnhanceArgs& a) {
  const auto params = load_model<float>(a.checkpoint);
  const bool pipe_in = a.in == "-", pipe_out = a.out == "-";
  const auto chunk = static_cast<std::size_t>(std::llround(a.chunk_ms * 1e-3 * kModelSampleRate));
  if (chunk == 0) throw std::invalid_argument("--chunk-ms is shorter than one sample");

  auto deliver = [&](std::vector<double>& all, std::span<const double> part) {
    require_finite(part, "enhanced audio");
    if (pipe_out) {
      write_pcm16(part);
    } else {
      all.insert(all.end(), part.begin(), part.end());
    }
  };

  std::vector<double> out;
  if (pipe_in && a.stream) {
    // Sample-in/sample-out: output is written as soon as it is final.
    stream::StreamSession<float> session(params);
    std::vector<char> buf(2 * chunk);
    std::string carry;
    while (std::cin.read(buf.data(), static_cast<std::streamsize>(buf.size())) || std::cin.gcount() > 0) {
      carry.append(buf.data(), static_cast<std::size_t>(std::cin.gcount()));
      const std::size_t whole = carry.size() & ~std::size_t{1};
      const auto samples = decode_pcm16(carry.data(), whole);
      carry.erase(0, whole);
      deliver(out, session.push(samples).samples);
    }
    deliver(out, session.flush().samples);
  } else {
    dsp::Waveform wave;
    if (pipe_in) {
      const std::string bytes{std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
      wave = dsp::Waveform{decode_pcm16(bytes.data(), bytes.size())};
    } else {
      wave = io::read_wav(a.in);
    }
    const auto result = a.stream ? stream::enhance_streaming(params, wave, chunk) : enhance(params, wave);
    deliver(out, result.audio.samples);
  }
  if (!pipe_out) {
    io::write_wav(a.out, dsp::Waveform{std::move(out)},
                  a.pcm16 ? io::WavEncoding::kPcm16 : io::WavEncoding::kFloat32);
  }
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
};

// Config bundle: {"model": <object | "toy" | "default">, "train": {...}, "loss": {...}}.
int run_train(const TrainArgs& a) {
  const auto j = read_json_file(a.config);
  if (!j.is_object()) throw UnsupportedFormat("training config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "model" && key != "train" && key != "loss") {
      throw UnsupportedFormat("training config: unknown key '" + key + "'");
    }
  }
  ModelConfig model;
  if (j.contains("model")) {
    model = j["model"].is_string() ? model_config_arg(j["model"].get<std::string>())
                                   : ModelConfig::from_json(j["model"]);
  }
  const auto cfg = j.contains("train") ? train::TrainConfig::from_json(j["train"]) : train::TrainConfig{};
  const auto loss = j.contains("loss") ? train::LossConfig::from_json(j["loss"]) : train::LossConfig{};
  model.validate();
  cfg.validate();
  loss.validate();

  const auto manifest = data::read_manifest(a.data);
  const auto frames = model.frame_config();
  auto train_set = train::load_split(manifest, "train", frames, cfg.mask_clip);
  auto val_set = train::load_split(manifest, "val", frames, cfg.mask_clip);

  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "config.json") << json{{"model", model.to_json()},
                                                         {"train", cfg.to_json()},
                                                         {"loss", loss.to_json()}}
                                                        .dump(2)
                                                 << '\n';
  train::Trainer trainer(build_model<float>(model, cfg.seed), cfg, loss, std::move(train_set),
                         std::move(val_set), a.out);
  trainer.run([](const train::EpochRecord& rec) {
    auto r = rec.to_json();
    r["type"] = "epoch";
    emit(r);
  });
  save_model(fs::path(a.out) / "final.ckpt", trainer.params());
  if (!fs::exists(fs::path(a.out) / "best.ckpt")) save_model(fs::path(a.out) / "best.ckpt", trainer.best_params());
  emit({{"type", "done"},
        {"steps", trainer.steps()},
        {"epochs", trainer.epoch()},
        {"checkpoint", (fs::path(a.out) / "best.ckpt").string()}});
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, report, split = "test";
  std::size_t threads = 0;
};

int run_eval(const EvalArgs& a) {
  const auto params = load_model<float>(a.checkpoint);
  const auto report = eval::evaluate(params, data::read_manifest(a.data), a.split, a.threads);
  for (const auto& u : report.utterances) {
    require_finite(std::vector<double>{u.si_sdr_db, u.seg_snr_db, u.vad_auc}, "evaluation scores");
  }
  report.write(a.report);
  auto agg = report.aggregate.to_json();
  agg["type"] = "aggregate";
  agg["utterances"] = report.utterances.size();
  agg["report"] = a.report;
  emit(agg);
  return kOk;
}

struct SynthArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

int run_synth(const SynthArgs& a) {
  const auto cfg = a.spec.empty() ? data::SynthConfig{} : data::SynthConfig::from_json(read_json_file(a.spec));
  const auto manifest = data::synth_dataset(cfg, a.seed, a.out, a.threads);
  emit({{"type", "corpus"},
        {"manifest", (fs::path(a.out) / "manifest.jsonl").string()},
        {"items", manifest.items.size()},
        {"seed", a.seed}});
  return kOk;
}

struct BenchArgs {
  std::string checkpoint, config;
  double seconds = 10.0;
  double chunk_ms = 10.0;
  std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
  const auto params = a.checkpoint.empty() ? build_model<float>(model_config_arg(a.config), a.seed)
                                           : load_model<float>(a.checkpoint);
  auto r = stream::benchmark_rtf(params, a.seconds, a.chunk_ms, a.seed).to_json();
  r["type"] = "rtf";
  emit(r);
  return kOk;
}

struct GradcheckArgs {
  std::string config = "toy";
  std::uint64_t seed = 0;
  std::size_t per_tensor = 3;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto s = eval::gradcheck_model(model_config_arg(a.config), a.seed, a.per_tensor);
  const bool pass = std::isfinite(s.max_rel_error) && s.max_rel_error < eval::kModelGradTolerance &&
                    s.max_cancelled_bias_grad < eval::kCancelledBiasTolerance;
  auto r = s.to_json();
  r["type"] = "gradcheck";
  r["tolerance"] = eval::kModelGradTolerance;
  r["pass"] = pass;
  emit(r);
  return pass ? kOk : kNumericalFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VSANet speech enhancement and voice activity detection"};
  app.require_subcommand(1);

  EnhanceArgs ea;
  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance a 16 kHz mono WAV file");
  enhance_cmd->add_option("--in", ea.in, "Input WAV ('-' reads raw PCM16 from stdin)")->required();
  enhance_cmd->add_option("--out", ea.out, "Output WAV ('-' writes raw PCM16 to stdout)")->required();
  enhance_cmd->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  enhance_cmd->add_flag("--stream", ea.stream, "Run the causal streaming path");
  enhance_cmd->add_option("--chunk-ms", ea.chunk_ms, "Streaming chunk length in ms")->check(CLI::PositiveNumber);
  enhance_cmd->add_flag("--pcm16", ea.pcm16, "Write 16-bit PCM instead of 32-bit float");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a manifest");
  train_cmd->add_option("--config", ta.config, "JSON bundle with model/train/loss sections")->required();
  train_cmd->add_option("--data", ta.data, "Corpus manifest (manifest.jsonl)")->required();
  train_cmd->add_option("--out", ta.out, "Output directory")->required();

  EvalArgs va;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", va.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", va.data, "Corpus manifest")->required();
  eval_cmd->add_option("--report", va.report, "JSONL report path")->required();
  eval_cmd->add_option("--split", va.split, "Manifest split")->capture_default_str();
  eval_cmd->add_option("--threads", va.threads, "Worker threads (0 = all cores)");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the seeded synthetic corpus");
  synth_cmd->add_option("--spec", sa.spec, "JSON corpus specification (defaults when omitted)");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--seed", sa.seed, "Corpus seed")->capture_default_str();
  synth_cmd->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Measure the streaming real-time factor");
  auto* bench_ckpt = bench_cmd->add_option("--checkpoint", ba.checkpoint, "Model checkpoint");
  bench_cmd->add_option("--config", ba.config, "Random model instead of a checkpoint: toy, default or JSON file")
      ->excludes(bench_ckpt);
  bench_cmd->add_option("--seconds", ba.seconds, "Audio duration")->check(CLI::PositiveNumber)->capture_default_str();
  bench_cmd->add_option("--chunk-ms", ba.chunk_ms, "Chunk length in ms")->check(CLI::PositiveNumber)->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed, "Input noise seed")->capture_default_str();

  GradcheckArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the whole model");
  grad_cmd->add_option("--config", ga.config, "toy, default or a JSON model config")->capture_default_str();
  grad_cmd->add_option("--seed", ga.seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--per-tensor", ga.per_tensor, "Elements checked per tensor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kUsage;
  }
  if (bench_cmd->parsed() && ba.checkpoint.empty() && ba.config.empty()) {
    std::cerr << "error: bench needs --checkpoint or --config\n\n" << bench_cmd->help();
    return kUsage;
  }

  try {
    if (enhance_cmd->parsed()) return run_enhance(ea);
    if (train_cmd->parsed()) return run_train(ta);
    if (eval_cmd->parsed()) return run_eval(va);
    if (synth_cmd->parsed()) return run_synth(sa);
    if (bench_cmd->parsed()) return run_bench(ba);
    if (grad_cmd->parsed()) return run_gradcheck(ga);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
