#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vsanet/errors.hpp"
#include "vsanet/model.hpp"
#include "vsanet/nn/gradcheck.hpp"

using namespace vsanet;
using namespace vsanet::nn;
using vsanet::testing::random_tensor;

namespace {

std::vector<double> sine(std::size_t n, double freq, double amp = 0.5) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = amp * std::sin(2 * 3.14159265358979323846 * freq * i / 16000.0);
  return v;
}

// Perturb every parameter so the zero-initialised attention and unit
// batch-norm statistics do not hide wiring mistakes.
template <typename Real>
void jitter(const ModelParams<Real>& p, std::uint64_t seed, double amount = 0.2) {
  Rng rng(seed);
  for (auto& nt : p.named_tensors()) {
    for (auto& v : nt.tensor.data()) {
      if (nt.name.ends_with("running_var")) {
        v = static_cast<Real>(rng.uniform(0.5, 2.0));
      } else {
        v += static_cast<Real>(rng.uniform(-amount, amount));
      }
    }
  }
}

}  // namespace

TEST_CASE("default configuration parameter count") {
  // Layer-by-layer tally of the default architecture.
  const std::size_t encoder = (16 * 1 * 10 + 16 + 48) + (32 * 16 * 10 + 32 + 96) + (64 * 32 * 10 + 64 + 192) +
                              (128 * 64 * 10 + 128 + 384) + (256 * 128 * 10 + 256 + 768);
  const std::size_t se_gru = (3 * 128 * (4096 + 128) + 6 * 128) + (3 * 64 * (128 + 64) + 6 * 64) +
                             (3 * 32 * (64 + 32) + 6 * 32);
  const std::size_t se_linear = 32 * 4096 + 4096;
  const std::size_t csa = 2 * 7 * 15 + 1;
  const std::size_t decoder = (512 * 128 * 10 + 128 * 4 + 2 * csa) + (256 * 64 * 10 + 64 * 4 + 2 * csa) +
                              (128 * 32 * 10 + 32 * 4 + 2 * csa) + (64 * 16 * 10 + 16 * 4 + 2 * csa) +
                              (32 * 1 * 10 + 1 * 3 + csa);
  const std::size_t vad = (8 * 256 * 10 + 8 * 4) + (3 * 32 * (64 + 32) + 6 * 32) + (3 * 16 * (32 + 16) + 6 * 16) +
                          (3 * 8 * (16 + 8) + 6 * 8) + (8 + 1);
  const std::size_t expected = encoder + se_gru + se_linear + decoder + vad;
  CHECK(expected == 3148487);

  const ModelConfig cfg;
  CHECK(param_count(cfg) == expected);
  CHECK(param_count(cfg) >= 2'900'000);
  CHECK(param_count(cfg) <= 3'300'000);
  CHECK(cfg.bottleneck_freq() == 16);
  CHECK(cfg.vad_freq() == 8);
  CHECK(build_model<float>(cfg, 0).trainable_count() == expected);
}

TEST_CASE("toy configuration closes its shape algebra") {
  const auto cfg = ModelConfig::toy();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.se_linear_out == 64);
  CHECK(param_count(cfg) == build_model<double>(cfg, 3).trainable_count());
}

TEST_CASE("invalid configurations are rejected") {
  auto cfg = ModelConfig::toy();
  cfg.encoder_channels.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = ModelConfig::toy();
  cfg.se_linear_out = 63;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = ModelConfig::toy();
  cfg.decoder_channels.back() = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = ModelConfig::toy();
  cfg.conv_stride[1] = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = ModelConfig::toy();
  cfg.dct_size = 48;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  CHECK_THROWS_AS(ModelConfig::from_json({{"dct_size", 64}, {"bogus", 1}}), std::invalid_argument);
}

TEST_CASE("configuration JSON round-trips") {
  auto cfg = ModelConfig::toy();
  cfg.mask_clip = 1.5;
  CHECK(ModelConfig::from_json(cfg.to_json()) == cfg);
  CHECK(ModelConfig::from_json(ModelConfig{}.to_json()) == ModelConfig{});
}

TEST_CASE("forward shapes and output ranges") {
  const auto cfg = ModelConfig::toy();
  const auto p = build_model<double>(cfg, 7);
  jitter(p, 8, 0.5);
  Rng rng(9);
  const auto x = random_tensor<double>(rng, Shape{2, 1, 64, 11}, -3, 3);
  for (auto mode : {Mode::kTrain, Mode::kEval}) {
    const auto out = forward(p, x, mode);
    CHECK(out.mask.shape() == Shape{2, 1, 64, 11});
    CHECK(out.vad.shape() == Shape{2, 11});
    CHECK(out.encoded.shape() == Shape{2, 32, 2, 11});
    CHECK(out.vad_features.shape() == Shape{2, 4, 1, 11});
    for (double m : out.mask.data()) CHECK(std::abs(m) < cfg.mask_clip);
    for (double v : out.vad.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK_THROWS_AS(forward(p, Tensor<double>(Shape{1, 1, 32, 4}), Mode::kEval), std::invalid_argument);
  CHECK_THROWS_AS(forward(p, Tensor<double>(Shape{1, 2, 64, 4}), Mode::kEval), std::invalid_argument);
}

TEST_CASE("default model forward shapes") {
  const ModelConfig cfg;
  const auto p = build_model<float>(cfg, 1);
  const auto out = forward(p, Tensor<float>(Shape{1, 1, 512, 3}), Mode::kEval);
  CHECK(out.mask.shape() == Shape{1, 1, 512, 3});
  CHECK(out.encoded.shape() == Shape{1, 256, 16, 3});
  CHECK(out.vad_features.shape() == Shape{1, 8, 8, 3});
  CHECK(out.vad.shape() == Shape{1, 3});
}

TEST_CASE("initialisation is deterministic per seed") {
  const auto cfg = ModelConfig::toy();
  const auto a = build_model<float>(cfg, 42);
  const auto b = build_model<float>(cfg, 42);
  const auto c = build_model<float>(cfg, 43);
  CHECK(encode_checkpoint(to_checkpoint(a)) == encode_checkpoint(to_checkpoint(b)));
  CHECK(encode_checkpoint(to_checkpoint(a)) != encode_checkpoint(to_checkpoint(c)));

  for (const auto& nt : a.named_tensors()) {
    if (nt.name.ends_with("prelu.slope")) {
      for (float v : nt.tensor.data()) CHECK(v == 0.25f);
    }
    if (nt.name.find("csa") != std::string::npos) {
      for (float v : nt.tensor.data()) CHECK(v == 0.0f);
    }
  }
}

TEST_CASE("checkpoint round-trip preserves every tensor") {
  const auto cfg = ModelConfig::toy();
  const auto p = build_model<float>(cfg, 5);
  jitter(p, 6);
  const auto path = std::filesystem::temp_directory_path() / "vsanet_test_model.ckpt";
  save_model(path, p);
  const auto q = load_model<float>(path);
  CHECK(q.config == cfg);
  const auto a = p.named_tensors();
  const auto b = q.named_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(testing::bit_equal<float>(a[i].tensor.data(), b[i].tensor.data()));
  }
  // Same bytes when saved again.
  CHECK(encode_checkpoint(to_checkpoint(q)) == encode_checkpoint(to_checkpoint(p)));
  std::filesystem::remove(path);

  auto ckpt = to_checkpoint(p);
  ckpt.entries.pop_back();
  CHECK_THROWS_AS(from_checkpoint<float>(ckpt), UnsupportedFormat);
  ckpt = to_checkpoint(p);
  ckpt.entries[0].shape = {1};
  ckpt.entries[0].values.resize(1);
  CHECK_THROWS_AS(from_checkpoint<float>(ckpt), UnsupportedFormat);
}

TEST_CASE("cast and clone copy values") {
  const auto p = build_model<double>(ModelConfig::toy(), 11);
  jitter(p, 12);
  const auto f = cast_model<float>(p);
  const auto back = cast_model<double>(f);
  const auto a = p.named_tensors();
  const auto b = back.named_tensors();
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, testing::max_abs_diff(a[i].tensor.data(), b[i].tensor.data()));
  CHECK(worst < 1e-6);

  auto c = p.clone();
  c.encoder[0].conv.weight.data()[0] += 1.0;
  CHECK(c.encoder[0].conv.weight.data()[0] != p.encoder[0].conv.weight.data()[0]);
}

TEST_CASE("whole model is causal in eval mode") {
  const auto cfg = ModelConfig::toy();
  const auto p = build_model<double>(cfg, 21);
  jitter(p, 22, 0.3);
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 4 + rng.below(20);
    const std::size_t t0 = rng.below(T);
    auto x = random_tensor<double>(rng, Shape{1, 1, 64, T}, -2, 2);
    auto x2 = x.clone();
    for (std::size_t f = 0; f < 64; ++f)
      for (std::size_t t = t0 + 1; t < T; ++t) x2.data()[f * T + t] = rng.uniform(-5, 5);
    const auto a = forward(p, x, Mode::kEval);
    const auto b = forward(p, x2, Mode::kEval);
    bool same = true;
    for (std::size_t f = 0; f < 64; ++f)
      for (std::size_t t = 0; t <= t0; ++t) same = same && a.mask.data()[f * T + t] == b.mask.data()[f * T + t];
    for (std::size_t t = 0; t <= t0; ++t) same = same && a.vad.data()[t] == b.vad.data()[t];
    CHECK(same);
  }
}

TEST_CASE("apply_mask is element-wise") {
  const auto spec = dsp::stdct(dsp::Waveform{sine(1600, 440.0)}, dsp::FrameConfig::hamming(64, 16));
  std::vector<double> ones(spec.coeffs.size(), 1.0), zeros(spec.coeffs.size(), 0.0);
  CHECK(apply_mask(spec, ones).coeffs == spec.coeffs);
  for (double c : apply_mask(spec, zeros).coeffs) CHECK(c == 0.0);
  std::vector<double> half(spec.coeffs.size(), 0.5);
  const auto h = apply_mask(spec, half);
  for (std::size_t i = 0; i < h.coeffs.size(); ++i) CHECK(h.coeffs[i] == 0.5 * spec.coeffs[i]);
  CHECK_THROWS_AS(apply_mask(spec, std::vector<double>(3, 1.0)), std::invalid_argument);
}

TEST_CASE("identity mask reproduces the input") {
  const dsp::Waveform wave{sine(16000, 440.0)};
  auto identity = [](const dsp::Spectrogram& s) {
    return std::pair{std::vector<double>(s.coeffs.size(), 1.0), std::vector<double>(s.frames, 0.5)};
  };
  const auto out = enhance_with(identity, dsp::FrameConfig::hamming(512, 128), wave);
  REQUIRE(out.audio.samples.size() == wave.samples.size());
  CHECK(testing::max_abs_diff(out.audio.samples, wave.samples) < 1e-6);
  CHECK(out.vad.size() == 125);

  dsp::Waveform wrong{sine(800, 440.0), 8000};
  CHECK_THROWS_AS(enhance_with(identity, dsp::FrameConfig::hamming(512, 128), wrong), UnsupportedRate);
}

TEST_CASE("enhance keeps length and handles silence") {
  const auto p = build_model<float>(ModelConfig::toy(), 31);
  for (std::size_t n : {std::size_t{1}, std::size_t{15}, std::size_t{16}, std::size_t{1000}}) {
    const auto out = enhance(p, dsp::Waveform{sine(n, 300.0)});
    CHECK(out.audio.samples.size() == n);
    CHECK(out.audio.sample_rate == 16000);
  }
  const auto silent = enhance(p, dsp::Waveform{std::vector<double>(4000, 0.0)});
  for (double s : silent.audio.samples) CHECK(s == 0.0);
  for (double v : silent.vad) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("whole-model gradients match finite differences") {
  const auto cfg = ModelConfig::toy();
  auto p = build_model<double>(cfg, 41);
  jitter(p, 42, 0.3);
  Rng rng(43);
  const auto x = random_tensor<double>(rng, Shape{2, 1, 64, 6}, -2, 2);
  const auto wm = random_tensor<double>(rng, Shape{2, 1, 64, 6});
  const auto wv = random_tensor<double>(rng, Shape{2, 6});
  p.set_requires_grad(true);
  auto loss = [&] {
    const auto out = forward(p, x, Mode::kTrain);
    return add(sum(mul(out.mask, wm)), sum(mul(out.vad, wv)));
  };
  double worst = 0;
  for (const auto& nt : p.named_tensors()) {
    if (!nt.trainable) continue;
    std::vector<std::size_t> idx;
    for (int k = 0; k < 3; ++k) idx.push_back(rng.below(nt.tensor.size()));
    const auto r = finite_diff_check<double>(loss, nt.tensor, 1e-5, idx);
    INFO(nt.name);
    if (nt.name.ends_with("conv.bias")) {
      // Batch statistics cancel a bias that feeds batch norm: both sides are
      // zero up to rounding.
      CHECK(std::abs(r.analytic) < 1e-10);
      CHECK(std::abs(r.numeric) < 1e-7);
      continue;
    }
    CHECK(r.max_rel_error < 1e-3);
    worst = std::max(worst, r.max_rel_error);
  }
  MESSAGE("worst relative error " << worst);
}
