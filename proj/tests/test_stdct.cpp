#include "doctest.h"

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "vsanet/stdct.hpp"

using namespace vsanet;
using namespace vsanet::dsp;

namespace {

// Term-by-term evaluation of the DCT-II definition, independent of DctPlan.
std::vector<double> naive_dct(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t mu = 0; mu < n; ++mu) {
    const double c = mu == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += x[k] * std::cos(std::numbers::pi * mu * (2.0 * k + 1.0) / (2.0 * n));
    }
    out[mu] = c * std::sqrt(2.0 / n) * acc;
  }
  return out;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("dct of a constant frame excites only DC") {
  const auto out = dct_n(std::vector<double>{1, 1, 1, 1});
  CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-14));
  for (int i = 1; i < 4; ++i) CHECK(std::abs(out[i]) < 1e-14);
}

TEST_CASE("dct of an impulse matches direct evaluation") {
  const auto out = dct_n(std::vector<double>{1, 0, 0, 0});
  const double expected[] = {0.5, 0.6532814824381883, 0.5, 0.27059805007309856};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out[i] - expected[i]) < 1e-14);
}

TEST_CASE("dct matrix path agrees with the definition and preserves energy") {
  nn::Rng rng(7);
  for (std::size_t n : {1u, 4u, 16u, 64u, 512u}) {
    const auto x = testing::random_vector(rng, n);
    const auto fast = dct_n(x);
    const auto slow = naive_dct(x);
    CHECK(testing::max_abs_diff(fast, slow) < 1e-12);
    CHECK(std::abs(norm(fast) - norm(x)) < 1e-12);
  }
}

TEST_CASE("dct rejects an empty frame") {
  CHECK_THROWS_AS(dct_n(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("idct inverts dct") {
  const auto ones = idct_n(std::vector<double>{2, 0, 0, 0});
  for (double v : ones) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  nn::Rng rng(11);
  const auto x = testing::random_vector(rng, 512);
  const auto back = idct_n(dct_n(x));
  CHECK(testing::max_abs_diff(back, x) <= 1e-12 * norm(x));
}

TEST_CASE("idct of the first basis vector") {
  const auto out = idct_n(std::vector<double>{0, 1, 0, 0});
  const double s = std::sqrt(0.5);
  for (int n = 0; n < 4; ++n) {
    CHECK(std::abs(out[n] - s * std::cos(std::numbers::pi * (2 * n + 1) / 8.0)) < 1e-14);
  }
}

TEST_CASE("idct rejects a length mismatch") {
  CHECK_THROWS_AS(idct_n(std::vector<double>{1, 2, 3}, 4), std::invalid_argument);
}

TEST_CASE("DCT basis is orthonormal") {
  for (std::size_t n : {4u, 16u, 512u}) {
    auto plan = DctPlan::get(n);
    auto g = plan->matrix();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[i * n + k] * g[j * n + k];
        worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("stdct frame layout for 2 s of 16 kHz audio") {
  Waveform w;
  w.samples.assign(32000, 0.25);
  const auto cfg = FrameConfig::hamming();
  const auto spec = stdct(w, cfg);
  CHECK(spec.bins == 512);
  CHECK(cfg.hop * 1000 / w.sample_rate == 8);
  CHECK(cfg.win_len * 1000 / w.sample_rate == 32);
  // ceil((32000 + 384 - 512) / 128) + 1
  CHECK(spec.frames == 250);
  CHECK(spec.original_len == 32000);
}

TEST_CASE("stdct of silence is silent") {
  Waveform w;
  w.samples.assign(1000, 0.0);
  const auto spec = stdct(w, FrameConfig::hamming());
  for (double v : spec.coeffs) CHECK(v == 0.0);
}

TEST_CASE("single rectangular frame reduces to dct") {
  Waveform w;
  w.samples.assign(8, 1.0);
  const auto spec = stdct(w, FrameConfig::rectangular(8, 8));
  REQUIRE(spec.frames == 1);
  const auto expected = dct_n(std::vector<double>(8, 1.0));
  for (std::size_t f = 0; f < 8; ++f) CHECK(std::abs(spec.at(f, 0) - expected[f]) < 1e-14);
}

TEST_CASE("rectangular frames satisfy Parseval") {
  nn::Rng rng(3);
  Waveform w;
  w.samples = testing::random_vector(rng, 4000);
  const auto cfg = FrameConfig::rectangular(64, 16);
  const auto spec = stdct(w, cfg);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    double frame_energy = 0.0, column_energy = 0.0;
    for (std::size_t k = 0; k < 64; ++k) {
      const std::size_t p = t * cfg.hop + k;
      if (p >= cfg.start_pad() && p - cfg.start_pad() < w.size()) {
        const double v = w.samples[p - cfg.start_pad()];
        frame_energy += v * v;
      }
      column_energy += spec.at(k, t) * spec.at(k, t);
    }
    CHECK(std::abs(frame_energy - column_energy) <= 1e-10);
  }
}

TEST_CASE("stdct is linear") {
  nn::Rng rng(5);
  Waveform x, y, z;
  x.samples = testing::random_vector(rng, 3000);
  y.samples = testing::random_vector(rng, 3000);
  const double a = 0.7, b = -1.3;
  z.samples.resize(3000);
  for (std::size_t i = 0; i < 3000; ++i) z.samples[i] = a * x.samples[i] + b * y.samples[i];
  const auto cfg = FrameConfig::hamming();
  const auto sx = stdct(x, cfg), sy = stdct(y, cfg), sz = stdct(z, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < sz.coeffs.size(); ++i) {
    worst = std::max(worst, std::abs(sz.coeffs[i] - (a * sx.coeffs[i] + b * sy.coeffs[i])));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("istdct reconstructs arbitrary signals") {
  nn::Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto len = static_cast<std::size_t>(1 + rng.below(20000));
    Waveform w;
    w.samples = testing::random_vector(rng, len);
    for (auto cfg : {FrameConfig::hamming(), FrameConfig::hamming(64, 16), FrameConfig::hamming(128, 64)}) {
      const auto back = istdct(stdct(w, cfg));
      REQUIRE(back.size() == len);
      CHECK(testing::max_abs_diff(back.samples, w.samples) <= 1e-8);
    }
  }
}

TEST_CASE("istdct rejects an empty spectrogram") {
  Spectrogram spec;
  spec.frame_config = FrameConfig::hamming();
  spec.bins = 512;
  CHECK_THROWS_AS(istdct(spec), std::invalid_argument);
}

TEST_CASE("frame config validation") {
  CHECK_THROWS_AS(FrameConfig::hamming(512, 0), std::invalid_argument);
  CHECK_THROWS_AS(FrameConfig::hamming(512, 513), std::invalid_argument);
  auto cfg = FrameConfig::hamming();
  cfg.window[3] = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
