#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"
#include "vsanet/model.hpp"
#include "vsanet/wav.hpp"

namespace fs = std::filesystem;
using namespace vsanet;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "vsanet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Run run(const std::string& args, const std::string& stdin_file = "") {
  const auto out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  std::string cmd = std::string(VSANET_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
  if (!stdin_file.empty()) cmd += " < " + stdin_file;
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<json> lines(const std::string& text) {
  std::vector<json> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

fs::path toy_checkpoint() {
  const auto path = work_dir() / "toy.ckpt";
  if (!fs::exists(path)) save_model(path, build_model<float>(ModelConfig::toy(), 5));
  return path;
}

fs::path noise_wav(const std::string& name, int rate, std::size_t n) {
  nn::Rng rng(n);
  const auto path = work_dir() / name;
  io::write_wav(path, dsp::Waveform{testing::random_vector(rng, n, -0.3, 0.3), rate});
  return path;
}

}  // namespace

TEST_CASE("usage errors exit 1 and print usage on stderr") {
  for (const char* args : {"", "--bogus", "enhance --bogus", "frobnicate", "gradcheck --seed notanumber"}) {
    CAPTURE(args);
    const auto r = run(args);
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(r.out.empty());
  }
  CHECK(run("--help").code == 0);
}

TEST_CASE("enhance rejects other sample rates with exit 2") {
  const auto in = noise_wav("cd.wav", 44100, 4410);
  const auto r = run("enhance --in " + in.string() + " --out " + (work_dir() / "x.wav").string() +
                     " --checkpoint " + toy_checkpoint().string());
  CHECK(r.code == 2);
  CHECK(r.err.find("44100") != std::string::npos);
  CHECK(!fs::exists(work_dir() / "x.wav"));
}

TEST_CASE("missing or corrupt inputs exit 2") {
  const auto in = noise_wav("ok.wav", 16000, 1600);
  const auto out = (work_dir() / "y.wav").string();
  CHECK(run("enhance --in " + in.string() + " --out " + out + " --checkpoint /nonexistent.ckpt").code == 2);
  std::ofstream(work_dir() / "junk.ckpt") << "not a checkpoint";
  CHECK(run("enhance --in " + in.string() + " --out " + out + " --checkpoint " +
            (work_dir() / "junk.ckpt").string())
            .code == 2);
  CHECK(run("enhance --in /nonexistent.wav --out " + out + " --checkpoint " + toy_checkpoint().string()).code == 2);
}

TEST_CASE("non-finite model output exits 3") {
  auto p = build_model<float>(ModelConfig::toy(), 6);
  p.encoder[0].conv.weight.data()[0] = std::nanf("");
  const auto ckpt = work_dir() / "nan.ckpt";
  save_model(ckpt, p);
  const auto in = noise_wav("nan_in.wav", 16000, 1600);
  for (const char* mode : {"", " --stream"}) {
    const auto r = run("enhance --in " + in.string() + " --out " + (work_dir() / "nan.wav").string() +
                       " --checkpoint " + ckpt.string() + mode);
    CHECK(r.code == 3);
  }
}

TEST_CASE("batch and streaming enhancement agree") {
  const auto in = noise_wav("speech.wav", 16000, 12345);
  const auto ckpt = toy_checkpoint().string();
  const auto batch = work_dir() / "batch.wav", streamed = work_dir() / "stream.wav";
  REQUIRE(run("enhance --in " + in.string() + " --out " + batch.string() + " --checkpoint " + ckpt).code == 0);
  REQUIRE(run("enhance --stream --chunk-ms 7 --in " + in.string() + " --out " + streamed.string() +
              " --checkpoint " + ckpt)
              .code == 0);
  const auto a = io::read_wav(batch), b = io::read_wav(streamed);
  REQUIRE(a.size() == 12345);
  REQUIRE(b.size() == 12345);
  CHECK(testing::max_abs_diff(a.samples, b.samples) <= 1e-5);
  // Float32 WAV output rounds the library result.
  CHECK(testing::max_abs_diff(a.samples, enhance(load_model<float>(ckpt), io::read_wav(in)).audio.samples) <= 1e-7);
}

TEST_CASE("raw PCM16 pipe mode streams sample in, sample out") {
  nn::Rng rng(4);
  const auto samples = testing::random_vector(rng, 3000, -0.3, 0.3);
  std::string raw;
  for (double s : samples) {
    const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(s * 32768.0)));
    raw.push_back(static_cast<char>(v & 0xff));
    raw.push_back(static_cast<char>(v >> 8));
  }
  const auto raw_path = work_dir() / "in.pcm";
  std::ofstream(raw_path, std::ios::binary) << raw;
  const auto ckpt = toy_checkpoint().string();
  const auto s = run("enhance --stream --in - --out - --checkpoint " + ckpt, raw_path.string());
  const auto b = run("enhance --in - --out - --checkpoint " + ckpt, raw_path.string());
  REQUIRE(s.code == 0);
  REQUIRE(b.code == 0);
  CHECK(s.out.size() == raw.size());
  CHECK(b.out.size() == raw.size());
  int worst = 0;
  for (std::size_t i = 0; i + 1 < s.out.size(); i += 2) {
    auto word = [](const std::string& x, std::size_t k) {
      return static_cast<std::int16_t>(static_cast<std::uint8_t>(x[k]) | (static_cast<std::uint8_t>(x[k + 1]) << 8));
    };
    worst = std::max(worst, std::abs(word(s.out, i) - word(b.out, i)));
  }
  CHECK(worst <= 1);
}

TEST_CASE("synth-data, train and eval produce JSONL reports") {
  const auto dir = work_dir() / "pipeline";
  const auto spec = dir / "spec.json";
  fs::create_directories(dir);
  std::ofstream(spec) << R"({"num_train": 2, "num_val": 1, "num_test": 2, "duration_s": 0.6,
                            "min_gap_s": 0.1, "min_activity": 0.2})";
  const auto synth = run("synth-data --spec " + spec.string() + " --out " + (dir / "corpus").string() + " --seed 3");
  REQUIRE(synth.code == 0);
  const auto manifest = dir / "corpus" / "manifest.jsonl";
  CHECK(lines(synth.out).at(0)["items"] == 5);

  const auto cfg = dir / "train.json";
  std::ofstream(cfg) << R"({"model": "toy", "train": {"batch_size": 2, "epochs": 2, "lr": 0.001, "seed": 1}})";
  const auto tr = run("train --config " + cfg.string() + " --data " + manifest.string() + " --out " +
                      (dir / "run").string());
  REQUIRE(tr.code == 0);
  const auto log = lines(tr.out);
  REQUIRE(log.size() == 3);
  CHECK(log[0]["type"] == "epoch");
  CHECK(log[2]["type"] == "done");
  CHECK(log[2]["steps"] == 2);
  CHECK(fs::exists(dir / "run" / "best.ckpt"));
  CHECK(fs::exists(dir / "run" / "final.ckpt"));
  CHECK(lines(slurp(dir / "run" / "train_log.jsonl")).size() == 2);

  const auto report = dir / "report.jsonl";
  const auto ev = run("eval --checkpoint " + (dir / "run" / "best.ckpt").string() + " --data " +
                      manifest.string() + " --report " + report.string());
  REQUIRE(ev.code == 0);
  const auto rows = lines(slurp(report));
  REQUIRE(rows.size() == 3);
  double sum = 0.0;
  for (int i = 0; i < 2; ++i) {
    CHECK(rows[i]["type"] == "utterance");
    sum += rows[i]["si_sdr_improvement_db"].get<double>();
    CHECK(rows[i]["vad_auc"].get<double>() >= 0.0);
    CHECK(rows[i]["vad_auc"].get<double>() <= 1.0);
  }
  CHECK(rows[2]["type"] == "aggregate");
  CHECK(rows[2]["si_sdr_improvement_db"].get<double>() == sum / 2.0);
  CHECK(rows[2]["checkpoint_id"].get<std::string>().size() == 16);

  std::ofstream(dir / "bad.json") << R"({"model": "toy", "optimizer": {}})";
  CHECK(run("train --config " + (dir / "bad.json").string() + " --data " + manifest.string() + " --out " +
            (dir / "bad").string())
            .code == 2);
}

TEST_CASE("gradcheck and bench print one JSON record") {
  const auto g = run("gradcheck --config toy --seed 2 --per-tensor 1");
  CHECK(g.code == 0);
  const auto gj = lines(g.out);
  REQUIRE(gj.size() == 1);
  CHECK(gj[0]["pass"] == true);
  CHECK(gj[0]["max_rel_error"].get<double>() < 1e-3);

  const auto b = run("bench --checkpoint " + toy_checkpoint().string() + " --seconds 0.2");
  CHECK(b.code == 0);
  const auto bj = lines(b.out);
  REQUIRE(bj.size() == 1);
  CHECK(bj[0]["rtf"].get<double>() > 0.0);
  CHECK(bj[0]["audio_seconds"] == 0.2);
  CHECK(run("bench --seconds 1").code == 1);
}
