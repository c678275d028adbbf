#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "vsanet/nn/gradcheck.hpp"
#include "vsanet/nn/ops.hpp"

using namespace vsanet;
using namespace vsanet::nn;
using vsanet::testing::random_tensor;

namespace {

using T64 = Tensor<double>;

// Direct evaluation of the causal cross-correlation, used as an oracle.
T64 naive_conv(const T64& x, const Conv2dParams<double>& p, Conv2dOptions opt) {
  const auto& ws = p.weight.shape();
  const std::size_t B = x.dim(0), Ci = x.dim(1), F = x.dim(2), T = x.dim(3);
  const std::size_t Co = ws[0], kF = ws[2], kT = ws[3];
  const std::size_t Fo = (F + 2 * opt.pad_f - kF) / opt.stride_f + 1;
  T64 y(Shape{B, Co, Fo, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t fo = 0; fo < Fo; ++fo)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = p.bias.data()[co];
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t kf = 0; kf < kF; ++kf)
              for (std::size_t kt = 0; kt < kT; ++kt) {
                const long fi = static_cast<long>(fo * opt.stride_f + kf) - static_cast<long>(opt.pad_f);
                const long ti = static_cast<long>(t + kt) - static_cast<long>(kT - 1);
                if (fi < 0 || fi >= static_cast<long>(F) || ti < 0) continue;
                acc += p.weight.data()[((co * Ci + ci) * kF + kf) * kT + kt] *
                       x.data()[((b * Ci + ci) * F + fi) * T + ti];
              }
          y.data()[((b * Co + co) * Fo + fo) * T + t] = acc;
        }
  return y;
}

// Transposed conv by scattering every input element, then trimming.
T64 naive_tconv(const T64& x, const Conv2dParams<double>& p, TConv2dOptions opt) {
  const auto& ws = p.weight.shape();
  const std::size_t B = x.dim(0), Ci = x.dim(1), F = x.dim(2), T = x.dim(3);
  const std::size_t Co = ws[1], kF = ws[2], kT = ws[3];
  const std::size_t Fo = (F - 1) * opt.stride_f + kF + opt.output_pad_f - 2 * opt.pad_f;
  T64 y(Shape{B, Co, Fo, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t fo = 0; fo < Fo; ++fo)
        for (std::size_t t = 0; t < T; ++t) y.data()[((b * Co + co) * Fo + fo) * T + t] = p.bias.data()[co];
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t fi = 0; fi < F; ++fi)
        for (std::size_t ti = 0; ti < T; ++ti)
          for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t kf = 0; kf < kF; ++kf)
              for (std::size_t kt = 0; kt < kT; ++kt) {
                const long fo = static_cast<long>(fi * opt.stride_f + kf) - static_cast<long>(opt.pad_f);
                const std::size_t to = ti + kt;
                if (fo < 0 || fo >= static_cast<long>(Fo) || to >= T) continue;
                y.data()[((b * Co + co) * Fo + fo) * T + to] +=
                    p.weight.data()[((ci * Co + co) * kF + kf) * kT + kt] *
                    x.data()[((b * Ci + ci) * F + fi) * T + ti];
              }
  return y;
}

Conv2dParams<double> random_conv(Rng& rng, Shape w_shape, std::size_t c_out) {
  Conv2dParams<double> p;
  p.weight = random_tensor<double>(rng, std::move(w_shape), -0.5, 0.5);
  p.bias = random_tensor<double>(rng, Shape{c_out}, -0.5, 0.5);
  return p;
}

BatchNormParams<double> random_bn(Rng& rng, std::size_t c) {
  BatchNormParams<double> p;
  p.gain = random_tensor<double>(rng, Shape{c}, 0.5, 1.5);
  p.bias = random_tensor<double>(rng, Shape{c}, -0.5, 0.5);
  p.running_mean = random_tensor<double>(rng, Shape{c}, -0.2, 0.2);
  p.running_var = random_tensor<double>(rng, Shape{c}, 0.5, 2.0);
  return p;
}

GruParams<double> random_gru(Rng& rng, std::size_t in, std::size_t hidden, double range = 0.5) {
  GruParams<double> p;
  p.w_ih = random_tensor<double>(rng, Shape{3 * hidden, in}, -range, range);
  p.w_hh = random_tensor<double>(rng, Shape{3 * hidden, hidden}, -range, range);
  p.b_ih = random_tensor<double>(rng, Shape{3 * hidden}, -range, range);
  p.b_hh = random_tensor<double>(rng, Shape{3 * hidden}, -range, range);
  return p;
}

// Weighted sum with fixed random weights so every output element matters.
T64 probe_loss(const T64& y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor<double>(rng, y.shape());
  return sum(mul(y, w));
}

constexpr double kLayerTol = 1e-4;

void check_grad(const std::function<T64()>& loss, T64 x) {
  const auto r = finite_diff_check<double>(loss, x);
  INFO("worst index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric);
  CHECK(r.max_rel_error < kLayerTol);
}

}  // namespace

TEST_CASE("backward of sum of squares is 2x") {
  Rng rng(1);
  auto x = random_tensor<double>(rng, Shape{3, 4});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
}

TEST_CASE("sigmoid at zero has slope one quarter") {
  T64 x(Shape{1, 3}, std::vector<double>{0.5, -2.0, 3.0});
  LinearParams<double> lin{T64(Shape{1, 3}, 0.0), T64(Shape{1}, 0.0)};
  lin.weight.set_requires_grad(true);
  sigmoid(linear(x, lin)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(lin.weight.grad()[i] == doctest::Approx(0.25 * x.data()[i]));
}

TEST_CASE("backward requires a scalar") {
  T64 x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  CHECK_THROWS_AS(mul(x, x).backward(), std::invalid_argument);
}

TEST_CASE("backward twice through the same graph accumulates leaf gradients") {
  T64 x(Shape{2}, std::vector<double>{1.0, -3.0});
  x.set_requires_grad(true);
  auto loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-12.0));
}

TEST_CASE("no-grad guard disables recording") {
  T64 x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  NoGradGuard guard;
  CHECK_FALSE(sum(x).requires_grad());
}

TEST_CASE("element-wise definitions") {
  T64 a(Shape{1}, std::vector<double>{-1.0});
  T64 slope(Shape{1}, std::vector<double>{0.25});
  CHECK(prelu(a, slope).item() == doctest::Approx(-0.25));
  CHECK(prelu(T64(Shape{1}, std::vector<double>{2.0}), slope).item() == 2.0);
  CHECK(sigmoid(T64(Shape{1}, 0.0)).item() == 0.5);

  LinearParams<double> eye{T64(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}), T64(Shape{2}, 0.0)};
  const auto y = linear(T64(Shape{1, 2}, std::vector<double>{1, 2}), eye);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 2.0);

  const auto big = sigmoid(Tensor<float>(Shape{2}, std::vector<float>{100.f, -200.f}));
  CHECK(big.data()[0] < 1.0f);
  CHECK(big.data()[1] > 0.0f);
}

TEST_CASE("conv2d output sizes follow the encoder chain") {
  const Conv2dOptions opt{2, 2};
  std::size_t f = 512;
  std::vector<std::size_t> chain{f};
  for (int i = 0; i < 5; ++i) chain.push_back(f = conv_out_freq(f, 5, opt));
  CHECK(chain == std::vector<std::size_t>{512, 256, 128, 64, 32, 16});

  Rng rng(2);
  auto x = random_tensor<double>(rng, Shape{1, 1, 512, 3});
  auto p = random_conv(rng, Shape{2, 1, 5, 2}, 2);
  CHECK(conv2d_causal(x, p, opt).shape() == Shape{1, 2, 256, 3});
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  Rng rng(3);
  auto x = random_tensor<double>(rng, Shape{1, 1, 3, 3});
  Conv2dParams<double> p{T64(Shape{1, 1, 1, 1}, 1.0), T64(Shape{1}, 0.0)};
  const auto y = conv2d_causal(x, p, Conv2dOptions{1, 0});
  CHECK(testing::bit_equal<double>(y.data(), x.data()));
}

TEST_CASE("conv2d matches direct evaluation") {
  Rng rng(4);
  for (auto [kf, kt, stride, pad] : {std::array<std::size_t, 4>{5, 2, 2, 2}, {7, 15, 1, 3}, {3, 1, 1, 1}}) {
    auto x = random_tensor<double>(rng, Shape{2, 3, 12, 9});
    auto p = random_conv(rng, Shape{4, 3, kf, kt}, 4);
    const Conv2dOptions opt{stride, pad};
    const auto fast = conv2d_causal(x, p, opt);
    const auto slow = naive_conv(x, p, opt);
    REQUIRE(fast.shape() == slow.shape());
    CHECK(testing::max_abs_diff(fast.data(), slow.data()) < 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Rng rng(5);
  auto x = random_tensor<double>(rng, Shape{1, 2, 8, 4});
  auto p = random_conv(rng, Shape{4, 3, 5, 2}, 4);
  CHECK_THROWS_AS(conv2d_causal(x, p, {}), std::invalid_argument);
}

TEST_CASE("tconv2d doubles frequency and matches direct evaluation") {
  const TConv2dOptions opt{};
  std::size_t f = 16;
  for (int i = 0; i < 5; ++i) f = tconv_out_freq(f, 5, opt);
  CHECK(f == 512);

  Rng rng(6);
  auto x = random_tensor<double>(rng, Shape{2, 3, 8, 7});
  auto p = random_conv(rng, Shape{3, 2, 5, 2}, 2);
  const auto fast = tconv2d_causal(x, p, opt);
  CHECK(fast.shape() == Shape{2, 2, 16, 7});
  CHECK(testing::max_abs_diff(fast.data(), naive_tconv(x, p, opt).data()) < 1e-12);
}

TEST_CASE("tconv2d of zero input broadcasts the bias") {
  Rng rng(7);
  auto p = random_conv(rng, Shape{3, 2, 5, 2}, 2);
  const auto y = tconv2d_causal(T64(Shape{1, 3, 4, 5}, 0.0), p, TConv2dOptions{});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 8 * 5; ++i) CHECK(y.data()[c * 40 + i] == p.bias.data()[c]);
}

TEST_CASE("time-axis ops are causal under suffix perturbation") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 6 + rng.below(10);
    const std::size_t t0 = rng.below(T);
    auto x = random_tensor<double>(rng, Shape{1, 3, 16, T});
    auto x2 = x.clone();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 16; ++f)
        for (std::size_t t = t0 + 1; t < T; ++t) x2.data()[(c * 16 + f) * T + t] += rng.uniform(-1, 1);

    auto conv = random_conv(rng, Shape{2, 3, 5, 2}, 2);
    auto tconv = random_conv(rng, Shape{3, 2, 5, 2}, 2);
    auto gru_p = random_gru(rng, 3 * 16, 5);
    auto prefix_equal = [&](const T64& a, const T64& b) {
      const std::size_t frames = a.dim(a.rank() == 4 ? 3 : 1);
      const std::size_t planes = a.size() / frames;
      for (std::size_t pidx = 0; pidx < planes; ++pidx)
        for (std::size_t t = 0; t <= t0; ++t) {
          const std::size_t idx = a.rank() == 4 ? pidx * frames + t : t * planes + pidx;
          if (a.data()[idx] != b.data()[idx]) return false;
        }
      return true;
    };
    CHECK(prefix_equal(conv2d_causal(x, conv, {}), conv2d_causal(x2, conv, {})));
    CHECK(prefix_equal(tconv2d_causal(x, tconv, {}), tconv2d_causal(x2, tconv, {})));
    CHECK(prefix_equal(gru(to_frames(x), gru_p), gru(to_frames(x2), gru_p)));
  }
}

TEST_CASE("batch norm in eval mode with unit statistics is the identity") {
  Rng rng(9);
  auto x = random_tensor<double>(rng, Shape{2, 3, 4, 5});
  BatchNormParams<double> p{T64(Shape{3}, 1.0), T64(Shape{3}, 0.0), T64(Shape{3}, 0.0), T64(Shape{3}, 1.0)};
  const auto y = batch_norm2d(x, p, BnMode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) <= 1e-5 * std::abs(x.data()[i]) + 1e-12);
}

TEST_CASE("batch norm in train mode standardises each channel") {
  Rng rng(10);
  auto x = random_tensor<double>(rng, Shape{2, 3, 8, 6}, -4.0, 7.0);
  BatchNormParams<double> p{T64(Shape{3}, 1.0), T64(Shape{3}, 0.0), T64(Shape{3}, 0.0), T64(Shape{3}, 1.0)};
  const auto y = batch_norm2d(x, p, BnMode::kTrain);
  const std::size_t inner = 48;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0, in_mean = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        m += y.data()[(b * 3 + c) * inner + i];
        in_mean += x.data()[(b * 3 + c) * inner + i];
      }
    m /= 2 * inner;
    in_mean /= 2 * inner;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < inner; ++i) v += std::pow(y.data()[(b * 3 + c) * inner + i] - m, 2);
    v /= 2 * inner;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);  // eps = 1e-5 shrinks the variance slightly
    CHECK(p.running_mean.data()[c] == doctest::Approx(0.1 * in_mean));
  }
}

TEST_CASE("batch norm rejects a single element per channel in train mode") {
  BatchNormParams<double> p{T64(Shape{2}, 1.0), T64(Shape{2}, 0.0), T64(Shape{2}, 0.0), T64(Shape{2}, 1.0)};
  CHECK_THROWS_AS(batch_norm2d(T64(Shape{1, 2, 1, 1}, 1.0), p, BnMode::kTrain), std::invalid_argument);
  CHECK_NOTHROW(batch_norm2d(T64(Shape{1, 2, 1, 1}, 1.0), p, BnMode::kEval));
}

TEST_CASE("GRU with all-zero parameters stays at zero") {
  GruParams<double> p{T64(Shape{12, 3}, 0.0), T64(Shape{12, 4}, 0.0), T64(Shape{12}, 0.0), T64(Shape{12}, 0.0)};
  const auto y = gru(T64(Shape{1, 5, 3}, 0.0), p);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("GRU state threads across a split bit-exactly") {
  Rng rng(12);
  auto p = random_gru(rng, 6, 5);
  const std::size_t T = 11;
  auto x = random_tensor<double>(rng, Shape{1, T, 6});
  const auto full = gru(x, p);
  for (std::size_t t0 : {1u, 4u, 10u}) {
    std::vector<double> a(x.data().begin(), x.data().begin() + t0 * 6);
    std::vector<double> b(x.data().begin() + t0 * 6, x.data().end());
    const auto first = gru(T64(Shape{1, t0, 6}, a), p);
    T64 h(Shape{1, 5}, std::vector<double>(first.data().end() - 5, first.data().end()));
    const auto second = gru(T64(Shape{1, T - t0, 6}, b), p, h);
    std::vector<double> joined(first.data().begin(), first.data().end());
    joined.insert(joined.end(), second.data().begin(), second.data().end());
    CHECK(testing::bit_equal<double>(joined, full.data()));
  }
}

TEST_CASE("GRU rejects mismatched input width") {
  Rng rng(13);
  auto p = random_gru(rng, 6, 5);
  CHECK_THROWS_AS(gru(T64(Shape{1, 3, 7}, 0.0), p), std::invalid_argument);
}

TEST_CASE("gradients match finite differences for every op") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    Rng rng(1000 + seed);

    SUBCASE("elementwise") {
      auto x = random_tensor<double>(rng, Shape{2, 3, 2, 2});
      auto y = random_tensor<double>(rng, Shape{2, 3, 2, 2});
      auto slope = random_tensor<double>(rng, Shape{3}, 0.05, 0.5);
      auto f = [&] { return probe_loss(tanh(add(prelu(mul(x, y), slope), scale(sigmoid(sub(x, y)), 0.7))), seed); };
      check_grad(f, x);
      check_grad(f, y);
      check_grad(f, slope);
    }
    SUBCASE("linear") {
      auto x = random_tensor<double>(rng, Shape{2, 3, 4});
      LinearParams<double> p{random_tensor<double>(rng, Shape{5, 4}), random_tensor<double>(rng, Shape{5})};
      auto f = [&] { return probe_loss(linear(x, p), seed); };
      check_grad(f, x);
      check_grad(f, p.weight);
      check_grad(f, p.bias);
    }
    SUBCASE("conv2d") {
      auto x = random_tensor<double>(rng, Shape{2, 2, 8, 5});
      auto p = random_conv(rng, Shape{3, 2, 5, 2}, 3);
      auto f = [&] { return probe_loss(conv2d_causal(x, p, {}), seed); };
      check_grad(f, x);
      check_grad(f, p.weight);
      check_grad(f, p.bias);
    }
    SUBCASE("tconv2d") {
      auto x = random_tensor<double>(rng, Shape{2, 3, 4, 5});
      auto p = random_conv(rng, Shape{3, 2, 5, 2}, 2);
      auto f = [&] { return probe_loss(tconv2d_causal(x, p, {}), seed); };
      check_grad(f, x);
      check_grad(f, p.weight);
      check_grad(f, p.bias);
    }
    SUBCASE("batch norm") {
      auto x = random_tensor<double>(rng, Shape{2, 3, 3, 4}, -2.0, 3.0);
      auto p = random_bn(rng, 3);
      for (auto mode : {BnMode::kTrain, BnMode::kEval}) {
        auto f = [&] { return probe_loss(batch_norm2d(x, p, mode), seed); };
        check_grad(f, x);
        check_grad(f, p.gain);
        check_grad(f, p.bias);
      }
    }
    SUBCASE("gru") {
      auto x = random_tensor<double>(rng, Shape{2, 6, 4});
      auto h0 = random_tensor<double>(rng, Shape{2, 3});
      auto p = random_gru(rng, 4, 3, 0.8);
      auto f = [&] { return probe_loss(gru(x, p, h0), seed); };
      check_grad(f, x);
      check_grad(f, h0);
      check_grad(f, p.w_ih);
      check_grad(f, p.w_hh);
      check_grad(f, p.b_ih);
      check_grad(f, p.b_hh);
    }
    SUBCASE("pooling, gating and layout") {
      auto u = random_tensor<double>(rng, Shape{2, 4, 3, 5});
      auto v = random_tensor<double>(rng, Shape{2, 2, 3, 5});
      auto gate = random_tensor<double>(rng, Shape{2, 1, 3, 5});
      auto f = [&] {
        auto pooled = channel_pool(u);
        auto joined = concat_channels(mul_broadcast_channels(u, gate), add(pooled, v));
        return probe_loss(from_frames(to_frames(joined), 6, 3), seed);
      };
      check_grad(f, u);
      check_grad(f, v);
      check_grad(f, gate);
    }
  }
}

TEST_CASE("channel pool definitions") {
  T64 u(Shape{1, 2, 1, 1}, std::vector<double>{1.0, 3.0});
  const auto p = channel_pool(u);
  CHECK(p.data()[0] == 2.0);
  CHECK(p.data()[1] == 3.0);

  Rng rng(14);
  auto single = random_tensor<double>(rng, Shape{1, 1, 3, 4});
  const auto ps = channel_pool(single);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(ps.data()[i] == single.data()[i]);
    CHECK(ps.data()[12 + i] == single.data()[i]);
  }
  CHECK_THROWS_AS(channel_pool(T64(Shape{1, 0, 2, 2})), std::invalid_argument);
}
