#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "vsanet/metrics.hpp"

using namespace vsanet;
using namespace vsanet::metrics;

namespace {

// Pairwise AUC by enumeration.
double brute_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

}  // namespace

TEST_CASE("si_sdr is scale invariant and capped") {
  nn::Rng rng(1);
  const auto ref = testing::random_vector(rng, 1000);
  std::vector<double> twice(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) twice[i] = 2 * ref[i];
  CHECK(si_sdr(ref, ref) == kSiSdrCapDb);
  CHECK(si_sdr(ref, twice) == kSiSdrCapDb);

  auto est = testing::random_vector(rng, 1000);
  for (std::size_t i = 0; i < est.size(); ++i) est[i] = ref[i] + 0.1 * est[i];
  std::vector<double> scaled(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) scaled[i] = -3.5 * est[i];
  CHECK(si_sdr(ref, scaled) == doctest::Approx(si_sdr(ref, est)).epsilon(1e-12));
}

TEST_CASE("si_sdr with orthogonal noise at one tenth of the energy is 10 dB") {
  nn::Rng rng(2);
  const auto ref = testing::random_vector(rng, 4096);
  auto noise = testing::random_vector(rng, 4096);
  // Gram-Schmidt: remove the ref component, then set the energy.
  double rn = 0, rr = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rn += ref[i] * noise[i];
    rr += ref[i] * ref[i];
  }
  double nn_ = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    noise[i] -= rn / rr * ref[i];
    nn_ += noise[i] * noise[i];
  }
  const double g = std::sqrt(rr / 10.0 / nn_);
  std::vector<double> est(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) est[i] = ref[i] + g * noise[i];
  CHECK(si_sdr(ref, est) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("si_sdr of uncorrelated estimates is not positive") {
  nn::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ref = testing::random_vector(rng, 2000);
    const auto est = testing::random_vector(rng, 2000);
    CHECK(si_sdr(ref, est) <= 0.0);
  }
  CHECK_THROWS_AS(si_sdr(std::vector<double>(4, 0.0), std::vector<double>(4, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(si_sdr(std::vector<double>(4, 1.0), std::vector<double>(3, 1.0)), std::invalid_argument);
}

TEST_CASE("segmental SNR clamps per frame") {
  std::vector<double> ref(1024, 1.0), est(1024, 1.0);
  CHECK(seg_snr(ref, est) == 35.0);
  for (std::size_t i = 0; i < 512; ++i) est[i] = 0.9;  // first frame: 20 dB
  CHECK(seg_snr(ref, est) == doctest::Approx((20.0 + 35.0) / 2));
  std::fill(est.begin(), est.end(), -5.0);
  CHECK(seg_snr(ref, est) == -10.0);
  // Silent reference frame counts at the floor.
  std::vector<double> quiet(512, 0.0), noisy(512, 0.1);
  CHECK(seg_snr(quiet, noisy) == -10.0);
}

TEST_CASE("vad metrics on hand-built cases") {
  const std::vector<int> y{1, 0, 1, 0};
  const std::vector<double> s{0.9, 0.2, 0.6, 0.7};
  const auto m = vad_metrics(y, s);
  CHECK(m.accuracy == doctest::Approx(0.75));
  CHECK(m.auc == doctest::Approx(0.75));

  const std::vector<double> perfect{1, 0, 1, 0};
  CHECK(vad_metrics(y, perfect).accuracy == 1.0);
  CHECK(vad_metrics(y, perfect).auc == 1.0);

  const std::vector<double> chance(4, 0.5);
  CHECK(vad_metrics(y, chance).auc == 0.5);

  const std::vector<int> one_class{1, 1, 1};
  CHECK(vad_metrics(one_class, std::vector<double>{0.1, 0.2, 0.9}).auc == 0.5);
  CHECK_THROWS_AS(vad_metrics(y, std::vector<double>{0.1}), std::invalid_argument);
}

TEST_CASE("rank-sum AUC matches pairwise enumeration") {
  nn::Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      s[i] = static_cast<double>(rng.below(7)) / 6.0;  // many ties
    }
    y[0] = 1;
    y[1] = 0;
    const auto m = vad_metrics(y, s);
    CHECK(m.auc == doctest::Approx(brute_auc(y, s)).epsilon(1e-12));
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
  }
}
