#include "vsanet/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "vsanet/errors.hpp"
#include "vsanet/nn/rng.hpp"

namespace vsanet {

using nn::Shape;
using nn::Tensor;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument("model config: " + msg);
}

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  while (exp--) r *= base;
  return r;
}

std::size_t decoder_in_channels(const ModelConfig& c, std::size_t j) {
  const std::size_t from_below = j == 0 ? c.encoder_channels.back() : c.decoder_channels[j - 1];
  return from_below + c.encoder_channels[c.depth() - 1 - j];
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.dct_size = 64;
  c.hop = 16;
  c.encoder_channels = {4, 8, 16, 24, 32};
  c.se_gru_hidden = {16, 8, 8};
  c.se_linear_out = 64;
  c.decoder_channels = {24, 16, 8, 4, 1};
  c.vad_transform_channels = 4;
  c.vad_gru_hidden = {8, 8, 4};
  c.vad_linear = {4, 1};
  return c;
}

void ModelConfig::validate() const {
  require(dct_size > 0, "dct_size must be positive");
  require(hop > 0 && hop <= dct_size, "hop must satisfy 0 < hop <= dct_size");
  require(!encoder_channels.empty(), "encoder_channels must not be empty");
  require(!se_gru_hidden.empty(), "se_gru_hidden must not be empty");
  require(!vad_gru_hidden.empty(), "vad_gru_hidden must not be empty");
  for (const auto* list : {&encoder_channels, &se_gru_hidden, &decoder_channels, &vad_gru_hidden}) {
    for (auto v : *list) require(v > 0, "layer sizes must be positive");
  }
  require(conv_kernel[0] % 2 == 1 && conv_kernel[1] >= 1, "conv_kernel must be (odd, >= 1)");
  require(conv_stride[0] >= 1, "conv_stride[0] must be >= 1");
  require(conv_stride[1] == 1, "conv_stride[1] (time) must be 1 for causal streaming");
  require(dct_size % ipow(conv_stride[0], depth()) == 0,
          "dct_size must be divisible by stride^depth = " + std::to_string(ipow(conv_stride[0], depth())));
  require(se_linear_out == encoder_channels.back() * bottleneck_freq(),
          "se_linear_out must equal last encoder channels x bottleneck frequency = " +
              std::to_string(encoder_channels.back() * bottleneck_freq()));
  require(decoder_channels.size() == depth(), "decoder_channels must have one entry per encoder layer");
  require(decoder_channels.back() == 1, "the last decoder layer must output one channel");
  require(csa_kernel[0] % 2 == 1 && csa_kernel[1] >= 1, "csa kernel must be (odd, >= 1)");
  require(vad_transform_channels > 0, "vad_transform_channels must be positive");
  require(vad_linear[0] == vad_gru_hidden.back(), "vad_linear input must equal the last VAD GRU size");
  require(vad_linear[1] == 1, "vad_linear output must be 1");
  require(std::isfinite(mask_clip) && mask_clip > 0.0, "mask_clip must be positive");
}

std::size_t ModelConfig::bottleneck_freq() const {
  return dct_size / ipow(conv_stride[0], depth());
}

std::size_t ModelConfig::vad_freq() const {
  return nn::conv_out_freq(bottleneck_freq(), conv_kernel[0], conv_options());
}

nn::Conv2dOptions ModelConfig::conv_options() const {
  return {conv_stride[0], (conv_kernel[0] - 1) / 2};
}

nn::TConv2dOptions ModelConfig::tconv_options() const {
  return {conv_stride[0], (conv_kernel[0] - 1) / 2, conv_stride[0] - 1};
}

dsp::FrameConfig ModelConfig::frame_config() const {
  return dsp::FrameConfig::hamming(dct_size, hop);
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"dct_size", dct_size},
      {"hop", hop},
      {"encoder_channels", encoder_channels},
      {"conv_kernel", conv_kernel},
      {"conv_stride", conv_stride},
      {"se_gru_hidden", se_gru_hidden},
      {"se_linear_out", se_linear_out},
      {"decoder_channels", decoder_channels},
      {"csa", {{"k_f", csa_kernel[0]}, {"k_t", csa_kernel[1]}}},
      {"vad_transform_channels", vad_transform_channels},
      {"vad_gru_hidden", vad_gru_hidden},
      {"vad_linear", vad_linear},
      {"mask_clip", mask_clip},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "dct_size",      "hop",         "encoder_channels",       "conv_kernel",    "conv_stride",
      "se_gru_hidden", "se_linear_out", "decoder_channels",     "csa",            "vad_transform_channels",
      "vad_gru_hidden", "vad_linear", "mask_clip"};
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("dct_size")) c.dct_size = j["dct_size"].get<std::size_t>();
    c.hop = j.contains("hop") ? j["hop"].get<std::size_t>() : c.dct_size / 4;
    if (j.contains("encoder_channels")) c.encoder_channels = j["encoder_channels"].get<std::vector<std::size_t>>();
    if (j.contains("conv_kernel")) c.conv_kernel = j["conv_kernel"].get<std::array<std::size_t, 2>>();
    if (j.contains("conv_stride")) c.conv_stride = j["conv_stride"].get<std::array<std::size_t, 2>>();
    if (j.contains("se_gru_hidden")) c.se_gru_hidden = j["se_gru_hidden"].get<std::vector<std::size_t>>();
    if (j.contains("se_linear_out")) c.se_linear_out = j["se_linear_out"].get<std::size_t>();
    if (j.contains("decoder_channels")) c.decoder_channels = j["decoder_channels"].get<std::vector<std::size_t>>();
    if (j.contains("csa")) {
      c.csa_kernel = {j["csa"].at("k_f").get<std::size_t>(), j["csa"].at("k_t").get<std::size_t>()};
    }
    if (j.contains("vad_transform_channels")) c.vad_transform_channels = j["vad_transform_channels"].get<std::size_t>();
    if (j.contains("vad_gru_hidden")) c.vad_gru_hidden = j["vad_gru_hidden"].get<std::vector<std::size_t>>();
    if (j.contains("vad_linear")) c.vad_linear = j["vad_linear"].get<std::array<std::size_t, 2>>();
    if (j.contains("mask_clip")) c.mask_clip = j["mask_clip"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Real>
std::vector<NamedTensor<Real>> ModelParams<Real>::named_tensors() const {
  std::vector<NamedTensor<Real>> out;
  auto block = [&](const std::string& prefix, const ConvBlock<Real>& b) {
    out.push_back({prefix + ".conv.weight", b.conv.weight, true});
    out.push_back({prefix + ".conv.bias", b.conv.bias, true});
    out.push_back({prefix + ".bn.gain", b.bn.gain, true});
    out.push_back({prefix + ".bn.bias", b.bn.bias, true});
    out.push_back({prefix + ".bn.running_mean", b.bn.running_mean, false});
    out.push_back({prefix + ".bn.running_var", b.bn.running_var, false});
    if (b.prelu.defined()) out.push_back({prefix + ".prelu.slope", b.prelu, true});
  };
  auto gru = [&](const std::string& prefix, const nn::GruParams<Real>& g) {
    out.push_back({prefix + ".w_ih", g.w_ih, true});
    out.push_back({prefix + ".w_hh", g.w_hh, true});
    out.push_back({prefix + ".b_ih", g.b_ih, true});
    out.push_back({prefix + ".b_hh", g.b_hh, true});
  };
  auto csa = [&](const std::string& prefix, const CsaParams<Real>& c) {
    out.push_back({prefix + ".weight", c.weight, true});
    out.push_back({prefix + ".bias", c.bias, true});
  };
  for (std::size_t i = 0; i < encoder.size(); ++i) block("encoder." + std::to_string(i), encoder[i]);
  for (std::size_t i = 0; i < se_gru.size(); ++i) gru("se_gru." + std::to_string(i), se_gru[i]);
  out.push_back({"se_linear.weight", se_linear.weight, true});
  out.push_back({"se_linear.bias", se_linear.bias, true});
  for (std::size_t i = 0; i < skip_csa.size(); ++i) csa("skip_csa." + std::to_string(i), skip_csa[i]);
  for (std::size_t i = 0; i < decoder.size(); ++i) block("decoder." + std::to_string(i), decoder[i]);
  for (std::size_t i = 0; i < decoder_csa.size(); ++i) csa("decoder_csa." + std::to_string(i), decoder_csa[i]);
  block("vad_transform", vad_transform);
  for (std::size_t i = 0; i < vad_gru.size(); ++i) gru("vad_gru." + std::to_string(i), vad_gru[i]);
  out.push_back({"vad_linear.weight", vad_linear.weight, true});
  out.push_back({"vad_linear.bias", vad_linear.bias, true});
  return out;
}

template <typename Real>
std::vector<Tensor<Real>> ModelParams<Real>::trainable_tensors() const {
  std::vector<Tensor<Real>> out;
  for (auto& nt : named_tensors()) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

template <typename Real>
std::size_t ModelParams<Real>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : trainable_tensors()) n += t.size();
  return n;
}

template <typename Real>
ModelParams<Real> ModelParams<Real>::clone() const {
  return cast_model<Real>(*this);
}

template <typename Real>
void ModelParams<Real>::set_requires_grad(bool flag) const {
  for (auto t : trainable_tensors()) t.set_requires_grad(flag);
}

template <typename Real>
void ModelParams<Real>::zero_grad() const {
  for (auto t : trainable_tensors()) t.zero_grad();
}

template <typename Real>
ModelParams<Real> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const nn::Rng root(seed);
  auto uniform = [&](const std::string& name, Shape shape, double bound) {
    nn::Rng rng = root.split(name);
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
    return t;
  };
  const std::size_t kF = config.conv_kernel[0], kT = config.conv_kernel[1];

  auto conv_block = [&](const std::string& prefix, std::size_t in, std::size_t out, bool transposed,
                        bool with_prelu) {
    ConvBlock<Real> b;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kF * kT));
    Shape w_shape = transposed ? Shape{in, out, kF, kT} : Shape{out, in, kF, kT};
    b.conv.weight = uniform(prefix + ".conv.weight", w_shape, bound);
    b.conv.bias = uniform(prefix + ".conv.bias", Shape{out}, bound);
    b.bn.gain = Tensor<Real>(Shape{out}, Real{1});
    b.bn.bias = Tensor<Real>(Shape{out}, Real{0});
    b.bn.running_mean = Tensor<Real>(Shape{out}, Real{0});
    b.bn.running_var = Tensor<Real>(Shape{out}, Real{1});
    if (with_prelu) b.prelu = Tensor<Real>(Shape{out}, static_cast<Real>(0.25));
    return b;
  };
  auto gru_layer = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
    const double bi = 1.0 / std::sqrt(static_cast<double>(in));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    return nn::GruParams<Real>{uniform(prefix + ".w_ih", Shape{3 * hidden, in}, bi),
                               uniform(prefix + ".w_hh", Shape{3 * hidden, hidden}, bh),
                               uniform(prefix + ".b_ih", Shape{3 * hidden}, bh),
                               uniform(prefix + ".b_hh", Shape{3 * hidden}, bh)};
  };
  auto linear_layer = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return nn::LinearParams<Real>{uniform(prefix + ".weight", Shape{out, in}, bound),
                                  uniform(prefix + ".bias", Shape{out}, bound)};
  };

  ModelParams<Real> p;
  p.config = config;
  const std::size_t depth = config.depth();
  std::size_t in = 1;
  for (std::size_t i = 0; i < depth; ++i) {
    p.encoder.push_back(conv_block("encoder." + std::to_string(i), in, config.encoder_channels[i], false, true));
    in = config.encoder_channels[i];
  }
  in = config.se_linear_out;
  for (std::size_t i = 0; i < config.se_gru_hidden.size(); ++i) {
    p.se_gru.push_back(gru_layer("se_gru." + std::to_string(i), in, config.se_gru_hidden[i]));
    in = config.se_gru_hidden[i];
  }
  p.se_linear = linear_layer("se_linear", in, config.se_linear_out);
  for (std::size_t j = 0; j < depth; ++j) {
    p.skip_csa.push_back(make_csa<Real>(config.csa_kernel[0], config.csa_kernel[1]));
    const bool last = j + 1 == depth;
    p.decoder.push_back(conv_block("decoder." + std::to_string(j), decoder_in_channels(config, j),
                                   config.decoder_channels[j], true, !last));
    if (!last) p.decoder_csa.push_back(make_csa<Real>(config.csa_kernel[0], config.csa_kernel[1]));
  }
  p.vad_transform = conv_block("vad_transform", config.encoder_channels.back(),
                               config.vad_transform_channels, false, true);
  in = config.vad_transform_channels * config.vad_freq();
  for (std::size_t i = 0; i < config.vad_gru_hidden.size(); ++i) {
    p.vad_gru.push_back(gru_layer("vad_gru." + std::to_string(i), in, config.vad_gru_hidden[i]));
    in = config.vad_gru_hidden[i];
  }
  p.vad_linear = linear_layer("vad_linear", config.vad_linear[0], config.vad_linear[1]);
  return p;
}

std::size_t param_count(const ModelConfig& c) {
  c.validate();
  const std::size_t k = c.conv_kernel[0] * c.conv_kernel[1];
  const std::size_t csa = 2 * c.csa_kernel[0] * c.csa_kernel[1] + 1;
  auto gru_stack = [](std::size_t in, const std::vector<std::size_t>& hidden) {
    std::size_t n = 0;
    for (auto h : hidden) {
      n += 3 * h * (in + h) + 6 * h;
      in = h;
    }
    return n;
  };
  std::size_t n = 0;
  std::size_t in = 1;
  for (auto out : c.encoder_channels) {
    n += out * in * k + out + 3 * out;  // conv, BN gain/bias, PReLU
    in = out;
  }
  n += gru_stack(c.se_linear_out, c.se_gru_hidden);
  n += c.se_gru_hidden.back() * c.se_linear_out + c.se_linear_out;
  for (std::size_t j = 0; j < c.depth(); ++j) {
    const std::size_t out = c.decoder_channels[j];
    const bool last = j + 1 == c.depth();
    n += decoder_in_channels(c, j) * out * k + out + 2 * out + (last ? 0 : out);
    n += csa * (last ? 1 : 2);
  }
  const std::size_t vt = c.vad_transform_channels;
  n += vt * c.encoder_channels.back() * k + vt + 3 * vt;
  n += gru_stack(vt * c.vad_freq(), c.vad_gru_hidden);
  n += c.vad_linear[0] * c.vad_linear[1] + c.vad_linear[1];
  return n;
}

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& params) {
  ModelParams<To> out = build_model<To>(params.config, 0);
  const auto src = params.named_tensors();
  const auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].tensor;
    auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), d.data().begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename Real>
ModelOutput<Real> forward(const ModelParams<Real>& p, const Tensor<Real>& x, Mode mode) {
  const ModelConfig& c = p.config;
  if (!x.defined() || x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != c.dct_size) {
    throw std::invalid_argument("forward: expected input [B, 1, " + std::to_string(c.dct_size) +
                                ", T], got " + (x.defined() ? nn::to_string(x.shape()) : "undefined"));
  }
  const auto bn_mode = mode == Mode::kTrain ? nn::BnMode::kTrain : nn::BnMode::kEval;
  const auto conv_opt = c.conv_options();
  const auto tconv_opt = c.tconv_options();
  const std::size_t depth = c.depth();

  // Shared encoder.
  std::vector<Tensor<Real>> skips;
  Tensor<Real> h = x;
  for (const auto& block : p.encoder) {
    h = nn::prelu(nn::batch_norm2d(nn::conv2d_causal(h, block.conv, conv_opt), block.bn, bn_mode), block.prelu);
    skips.push_back(h);
  }
  ModelOutput<Real> out;
  out.encoded = h;
  const std::size_t channels = h.dim(1), freq = h.dim(2);

  // SE recurrent block: [B, C', F', T] -> [B, T, C'F'] -> GRUs -> linear -> back.
  Tensor<Real> r = nn::to_frames(h);
  for (const auto& g : p.se_gru) r = nn::gru(r, g);
  Tensor<Real> d = nn::from_frames(nn::linear(r, p.se_linear), channels, freq);

  // SE decoder with attention-gated skip paths.
  for (std::size_t j = 0; j < depth; ++j) {
    const auto skip = csa_forward(skips[depth - 1 - j], p.skip_csa[j]);
    const auto& block = p.decoder[j];
    auto y = nn::batch_norm2d(nn::tconv2d_causal(nn::concat_channels(d, skip), block.conv, tconv_opt),
                              block.bn, bn_mode);
    if (j + 1 < depth) {
      d = csa_forward(nn::prelu(y, block.prelu), p.decoder_csa[j]);
    } else {
      d = nn::scale(nn::tanh(y), static_cast<Real>(c.mask_clip));
    }
  }
  out.mask = d;

  // VAD branch.
  const auto& vt = p.vad_transform;
  out.vad_features = nn::prelu(nn::batch_norm2d(nn::conv2d_causal(h, vt.conv, conv_opt), vt.bn, bn_mode), vt.prelu);
  Tensor<Real> v = nn::to_frames(out.vad_features);
  for (const auto& g : p.vad_gru) v = nn::gru(v, g);
  const auto logits = nn::linear(v, p.vad_linear);
  out.vad = nn::reshape(nn::sigmoid(logits), Shape{x.dim(0), x.dim(3)});
  return out;
}

// ---------------------------------------------------------------------------
// Mask application and enhancement

dsp::Spectrogram apply_mask(const dsp::Spectrogram& x, std::span<const double> mask) {
  if (mask.size() != x.coeffs.size()) {
    throw std::invalid_argument("apply_mask: mask has " + std::to_string(mask.size()) +
                                " entries, spectrogram has " + std::to_string(x.coeffs.size()));
  }
  dsp::Spectrogram out = x;
  for (std::size_t i = 0; i < mask.size(); ++i) out.coeffs[i] = mask[i] * x.coeffs[i];
  return out;
}

Enhanced enhance_with(const MaskEstimator& estimator, const dsp::FrameConfig& frames,
                      const dsp::Waveform& wave) {
  if (wave.sample_rate != kModelSampleRate) throw UnsupportedRate(wave.sample_rate);
  const auto noisy = dsp::stdct(wave, frames);
  auto [mask, vad] = estimator(noisy);
  Enhanced out;
  out.audio = dsp::istdct(apply_mask(noisy, mask), wave.sample_rate);
  out.vad = std::move(vad);
  return out;
}

template <typename Real>
Enhanced enhance(const ModelParams<Real>& params, const dsp::Waveform& wave) {
  auto estimator = [&params](const dsp::Spectrogram& spec) {
    Tensor<Real> x(Shape{1, 1, spec.bins, spec.frames},
                   std::vector<Real>(spec.coeffs.begin(), spec.coeffs.end()));
    nn::NoGradGuard no_grad;
    const auto out = forward(params, x, Mode::kEval);
    std::pair<std::vector<double>, std::vector<double>> result{
        std::vector<double>(out.mask.data().begin(), out.mask.data().end()),
        std::vector<double>(out.vad.data().begin(), out.vad.data().end())};
    for (double m : result.first) {
      if (!std::isfinite(m)) throw NumericalError("model produced a non-finite mask value");
    }
    return result;
  };
  return enhance_with(estimator, params.config.frame_config(), wave);
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename Real>
nn::Checkpoint to_checkpoint(const ModelParams<Real>& params) {
  nn::Checkpoint ckpt;
  ckpt.meta = {{"kind", "vsanet-model"}, {"config", params.config.to_json()}};
  for (const auto& nt : params.named_tensors()) ckpt.entries.push_back(nn::make_entry(nt.name, nt.tensor));
  return ckpt;
}

template <typename Real>
ModelParams<Real> from_checkpoint(const nn::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("config")) throw UnsupportedFormat("checkpoint has no model config");
  ModelConfig config;
  try {
    config = ModelConfig::from_json(ckpt.meta.at("config"));
  } catch (const std::invalid_argument& e) {
    throw UnsupportedFormat(std::string("checkpoint config is invalid: ") + e.what());
  }
  auto params = build_model<Real>(config, 0);
  const auto named = params.named_tensors();
  if (named.size() != ckpt.entries.size()) {
    throw UnsupportedFormat("checkpoint has " + std::to_string(ckpt.entries.size()) +
                            " tensors, configuration expects " + std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = ckpt.entries[i];
    if (e.name != named[i].name || e.shape != named[i].tensor.shape()) {
      throw UnsupportedFormat("checkpoint tensor " + std::to_string(i) + " is '" + e.name + "' " +
                              nn::to_string(e.shape) + ", expected '" + named[i].name + "' " +
                              nn::to_string(named[i].tensor.shape()));
    }
    auto dst = named[i].tensor;
    std::copy(e.values.begin(), e.values.end(), dst.data().begin());
  }
  return params;
}

#define VSANET_INSTANTIATE_MODEL(Real)                                                         \
  template struct ModelParams<Real>;                                                           \
  template ModelParams<Real> build_model<Real>(const ModelConfig&, std::uint64_t);             \
  template ModelOutput<Real> forward(const ModelParams<Real>&, const Tensor<Real>&, Mode);     \
  template Enhanced enhance(const ModelParams<Real>&, const dsp::Waveform&);                   \
  template nn::Checkpoint to_checkpoint(const ModelParams<Real>&);                             \
  template ModelParams<Real> from_checkpoint<Real>(const nn::Checkpoint&);

VSANET_INSTANTIATE_MODEL(float)
VSANET_INSTANTIATE_MODEL(double)

template ModelParams<float> cast_model<float, float>(const ModelParams<float>&);
template ModelParams<float> cast_model<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_model<double, float>(const ModelParams<float>&);
template ModelParams<double> cast_model<double, double>(const ModelParams<double>&);

#undef VSANET_INSTANTIATE_MODEL

}  // namespace vsanet
