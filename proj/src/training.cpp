#include "vsanet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "vsanet/errors.hpp"
#include "vsanet/parallel.hpp"
#include "vsanet/synthesis.hpp"

namespace vsanet::train {

using nn::Shape;
using nn::Tensor;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename Real>
void require_loss_shapes(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& w, const char* op) {
  if (a.shape() != b.shape() || a.shape() != w.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + nn::to_string(a.shape()) + " / " +
                                nn::to_string(b.shape()) + " / " + nn::to_string(w.shape()));
  }
}

template <typename Real>
double weight_sum(const Tensor<Real>& w) {
  double s = 0.0;
  for (Real v : w.data()) s += v;
  if (!(s > 0.0)) throw std::invalid_argument("loss: weights sum to zero");
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void LossConfig::validate() const {
  for (double v : {lambda_se, lambda_vad, alpha}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss config: weights must be finite and >= 0");
  }
}

nlohmann::json LossConfig::to_json() const {
  return {{"lambda_se", lambda_se}, {"lambda_vad", lambda_vad}, {"alpha", alpha}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"lambda_se", "lambda_vad", "alpha"}, "loss config");
  LossConfig c;
  try {
    c.lambda_se = j.value("lambda_se", c.lambda_se);
    c.lambda_vad = j.value("lambda_vad", c.lambda_vad);
    c.alpha = j.value("alpha", c.alpha);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("loss config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw std::invalid_argument("train config: lr_decay must be in (0, 1)");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (epochs == 0 && max_steps == 0) throw std::invalid_argument("train config: nothing to do");
  if (!(rmsprop_rho >= 0.0 && rmsprop_rho < 1.0)) throw std::invalid_argument("train config: rmsprop_rho in [0, 1)");
  if (!(rmsprop_eps > 0.0)) throw std::invalid_argument("train config: rmsprop_eps must be > 0");
  if (!(mask_clip > 0.0)) throw std::invalid_argument("train config: mask_clip must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"lr_decay", lr_decay},
          {"patience_epochs", patience_epochs},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"rmsprop_rho", rmsprop_rho},
          {"rmsprop_eps", rmsprop_eps},
          {"mask_clip", mask_clip},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"lr", "lr_decay", "patience_epochs", "batch_size", "epochs", "max_steps", "rmsprop_rho",
                  "rmsprop_eps", "mask_clip", "seed"},
                 "train config");
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.patience_epochs = j.value("patience_epochs", c.patience_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.rmsprop_rho = j.value("rmsprop_rho", c.rmsprop_rho);
    c.rmsprop_eps = j.value("rmsprop_eps", c.rmsprop_eps);
    c.mask_clip = j.value("mask_clip", c.mask_clip);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reference losses

double loss_se(std::span<const double> s, std::span<const double> s_hat, std::span<const double> m,
               std::span<const double> m_hat, double alpha) {
  if (s.size() != s_hat.size() || m.size() != m_hat.size()) throw std::invalid_argument("loss_se: size mismatch");
  if (s.empty() || m.empty()) throw std::invalid_argument("loss_se: empty input");
  double l1 = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) l1 += std::abs(s[i] - s_hat[i]);
  for (std::size_t i = 0; i < m.size(); ++i) mse += (m[i] - m_hat[i]) * (m[i] - m_hat[i]);
  return l1 / static_cast<double>(s.size()) + alpha * mse / static_cast<double>(m.size());
}

double loss_vad(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size() || y.empty()) throw std::invalid_argument("loss_vad: size mismatch or empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y_hat[i], kBceClamp, 1.0 - kBceClamp);
    acc += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(y.size());
}

double loss_total(double l_se, double l_vad, const LossConfig& cfg) {
  return cfg.lambda_se * l_se + cfg.lambda_vad * l_vad;
}

// ---------------------------------------------------------------------------
// Tensor losses

template <typename Real>
Tensor<Real> l1_loss(const Tensor<Real>& pred, const Tensor<Real>& target, const Tensor<Real>& weight) {
  require_loss_shapes(pred, target, weight, "l1_loss");
  const double norm = weight_sum(weight);
  auto p = pred.data(), t = target.data(), w = weight.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += static_cast<double>(w[i]) * std::abs(p[i] - t[i]);
  return Tensor<Real>::make_result(
      Shape{1}, {static_cast<Real>(acc / norm)}, {&pred}, [pred, target, weight, norm](nn::TensorNode<Real>& self) {
        auto g = pred.node()->grad_buffer();
        auto p = pred.data(), t = target.data(), w = weight.data();
        const Real scale = static_cast<Real>(self.grad[0] / norm);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Real d = p[i] - t[i];
          if (d != Real{0}) g[i] += scale * w[i] * (d > 0 ? Real{1} : Real{-1});
        }
      });
}

template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& pred, const Tensor<Real>& target, const Tensor<Real>& weight) {
  require_loss_shapes(pred, target, weight, "mse_loss");
  const double norm = weight_sum(weight);
  auto p = pred.data(), t = target.data(), w = weight.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += w[i] * d * d;
  }
  return Tensor<Real>::make_result(
      Shape{1}, {static_cast<Real>(acc / norm)}, {&pred}, [pred, target, weight, norm](nn::TensorNode<Real>& self) {
        auto g = pred.node()->grad_buffer();
        auto p = pred.data(), t = target.data(), w = weight.data();
        const Real scale = static_cast<Real>(2.0 * self.grad[0] / norm);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * w[i] * (p[i] - t[i]);
      });
}

template <typename Real>
Tensor<Real> bce_loss(const Tensor<Real>& prob, const Tensor<Real>& target, const Tensor<Real>& weight) {
  require_loss_shapes(prob, target, weight, "bce_loss");
  const double norm = weight_sum(weight);
  auto p = prob.data(), y = target.data(), w = weight.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
    acc -= w[i] * (y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q));
  }
  return Tensor<Real>::make_result(
      Shape{1}, {static_cast<Real>(acc / norm)}, {&prob}, [prob, target, weight, norm](nn::TensorNode<Real>& self) {
        auto g = prob.node()->grad_buffer();
        auto p = prob.data(), y = target.data(), w = weight.data();
        const double scale = self.grad[0] / norm;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double q = p[i];
          if (q < kBceClamp || q > 1.0 - kBceClamp) continue;  // clamped: flat
          g[i] += static_cast<Real>(scale * w[i] * (-y[i] / q + (1.0 - y[i]) / (1.0 - q)));
        }
      });
}

// ---------------------------------------------------------------------------
// RMSprop

void rmsprop_update(std::span<double> params, std::span<const double> grads, std::span<double> v, double lr,
                    double rho, double eps) {
  if (params.size() != grads.size() || params.size() != v.size()) {
    throw std::invalid_argument("rmsprop_update: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    v[i] = rho * v[i] + (1.0 - rho) * grads[i] * grads[i];
    params[i] -= lr * grads[i] / (std::sqrt(v[i]) + eps);
  }
}

template <typename Real>
void RmsProp<Real>::step(const std::vector<Tensor<Real>>& params, double lr) {
  if (v.empty()) {
    for (const auto& p : params) v.emplace_back(p.size(), Real{0});
  }
  if (v.size() != params.size()) throw std::invalid_argument("RmsProp: parameter list changed");
  const Real r = static_cast<Real>(rho), one_minus = static_cast<Real>(1.0 - rho);
  const Real e = static_cast<Real>(eps), rate = static_cast<Real>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto& acc = v[k];
    if (acc.size() != p.size()) throw std::invalid_argument("RmsProp: parameter size changed");
    auto data = p.data();
    if (!p.has_grad()) {
      for (auto& a : acc) a *= r;
      continue;
    }
    auto g = std::as_const(p).grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      acc[i] = r * acc[i] + one_minus * g[i] * g[i];
      data[i] -= rate * g[i] / (std::sqrt(acc[i]) + e);
    }
  }
}

// ---------------------------------------------------------------------------
// Batching and the joint loss

template <typename Real>
Batch<Real> make_batch(std::span<const data::MixtureExample* const> examples, const dsp::FrameConfig& frames) {
  if (examples.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t B = examples.size(), F = frames.win_len;
  std::size_t L = 0, T = 0;
  for (const auto* ex : examples) {
    L = std::max(L, ex->clean.size());
    T = std::max(T, frames.frame_count(ex->clean.size()));
  }
  Batch<Real> b;
  b.noisy_spec = Tensor<Real>(Shape{B, 1, F, T});
  b.mask_target = Tensor<Real>(Shape{B, 1, F, T});
  b.bin_weight = Tensor<Real>(Shape{B, 1, F, T});
  b.clean = Tensor<Real>(Shape{B, L});
  b.sample_weight = Tensor<Real>(Shape{B, L});
  b.vad_target = Tensor<Real>(Shape{B, T});
  b.frame_weight = Tensor<Real>(Shape{B, T});
  for (std::size_t i = 0; i < B; ++i) {
    const auto& ex = *examples[i];
    const auto spec = dsp::stdct(ex.noisy, frames);
    if (ex.mask_target.bins != F || ex.mask_target.frames != spec.frames || ex.vad.size() != spec.frames) {
      throw std::invalid_argument("make_batch: example targets do not match the frame configuration");
    }
    const std::size_t Ti = spec.frames;
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < Ti; ++t) {
        const std::size_t dst = (i * F + f) * T + t;
        b.noisy_spec.data()[dst] = static_cast<Real>(spec.at(f, t));
        b.mask_target.data()[dst] = static_cast<Real>(ex.mask_target.at(f, t));
        b.bin_weight.data()[dst] = Real{1};
      }
    for (std::size_t s = 0; s < ex.clean.size(); ++s) {
      b.clean.data()[i * L + s] = static_cast<Real>(ex.clean.samples[s]);
      b.sample_weight.data()[i * L + s] = Real{1};
    }
    for (std::size_t t = 0; t < Ti; ++t) {
      b.vad_target.data()[i * T + t] = static_cast<Real>(ex.vad[t]);
      b.frame_weight.data()[i * T + t] = Real{1};
    }
    b.lengths.push_back(ex.clean.size());
  }
  return b;
}

template <typename Real>
LossParts<Real> batch_loss(const ModelParams<Real>& params, const Batch<Real>& batch, const LossConfig& loss,
                           Mode mode) {
  const auto out = forward(params, batch.noisy_spec, mode);
  const auto enhanced_spec = nn::mul(out.mask, batch.noisy_spec);
  const auto enhanced = istdct_batch(enhanced_spec, params.config.frame_config(), batch.lengths);
  const auto l_wave = l1_loss(enhanced, batch.clean, batch.sample_weight);
  const auto l_mask = mse_loss(out.mask, batch.mask_target, batch.bin_weight);
  const auto l_se = nn::add(l_wave, nn::scale(l_mask, static_cast<Real>(loss.alpha)));
  const auto l_vad = bce_loss(out.vad, batch.vad_target, batch.frame_weight);
  LossParts<Real> parts;
  parts.total = nn::add(nn::scale(l_se, static_cast<Real>(loss.lambda_se)),
                        nn::scale(l_vad, static_cast<Real>(loss.lambda_vad)));
  parts.se = l_se.item();
  parts.vad = l_vad.item();
  return parts;
}

// ---------------------------------------------------------------------------
// Trainer

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"step", step},   {"train_loss", train_loss},
          {"val_loss", val_loss}, {"lr", lr}, {"wall_time", wall_time}};
}

Trainer::Trainer(ModelParams<float> params, TrainConfig cfg, LossConfig loss, std::vector<data::MixtureExample> train,
                 std::vector<data::MixtureExample> val, std::filesystem::path out_dir)
    : params_(std::move(params)),
      cfg_(cfg),
      loss_(loss),
      train_(std::move(train)),
      val_(std::move(val)),
      out_dir_(std::move(out_dir)),
      frames_(params_.config.frame_config()),
      rng_(nn::Rng(cfg.seed).split("trainer")),
      lr_(cfg.lr) {
  cfg_.validate();
  loss_.validate();
  if (train_.empty()) throw std::invalid_argument("train: the training set is empty");
  opt_.rho = cfg_.rmsprop_rho;
  opt_.eps = cfg_.rmsprop_eps;
  params_.set_requires_grad(true);
  best_ = params_.clone();
  if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
  wall_start_ = now_seconds();
  begin_epoch();
}

bool Trainer::finished() const {
  if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) return true;
  return cfg_.epochs > 0 && epoch_ >= cfg_.epochs;
}

void Trainer::begin_epoch() {
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), 0);
  rng_.shuffle(order_.begin(), order_.end());
  cursor_ = 0;
  epoch_loss_sum_ = 0.0;
  epoch_batches_ = 0;
}

double Trainer::step() {
  if (finished()) throw std::logic_error("Trainer::step: training already finished");
  const std::size_t end = std::min(order_.size(), cursor_ + cfg_.batch_size);
  std::vector<const data::MixtureExample*> items;
  for (std::size_t i = cursor_; i < end; ++i) items.push_back(&train_[order_[i]]);
  const auto batch = make_batch<float>(items, frames_);

  params_.zero_grad();
  const auto parts = batch_loss(params_, batch, loss_, Mode::kTrain);
  const double value = parts.total.item();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite training loss at epoch " << epoch_ << ", step " << step_ << " (loss_se=" << parts.se
        << ", loss_vad=" << parts.vad << ", lr=" << lr_ << ")";
    throw NumericalError(msg.str());
  }
  parts.total.backward();
  opt_.step(params_.trainable_tensors(), lr_);

  ++step_;
  cursor_ = end;
  epoch_loss_sum_ += value;
  ++epoch_batches_;
  if (cursor_ >= order_.size()) end_epoch();
  return value;
}

void Trainer::end_epoch() {
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.step = step_;
  rec.train_loss = epoch_loss_sum_ / static_cast<double>(std::max<std::size_t>(1, epoch_batches_));
  rec.lr = lr_;
  rec.val_loss = val_.empty() ? rec.train_loss : dataset_loss(val_, Mode::kEval);
  if (!std::isfinite(rec.val_loss)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch_));

  if (!has_best_ || rec.val_loss < best_val_) {
    has_best_ = true;
    best_val_ = rec.val_loss;
    best_ = params_.clone();
    bad_epochs_ = 0;
    if (!out_dir_.empty()) save_model(out_dir_ / "best.ckpt", best_);
  } else if (++bad_epochs_ >= cfg_.patience_epochs) {
    lr_ *= cfg_.lr_decay;
    bad_epochs_ = 0;
  }
  rec.wall_time = now_seconds() - wall_start_;
  log_.push_back(rec);
  ++epoch_;
  begin_epoch();
  if (!out_dir_.empty()) {
    std::ofstream(out_dir_ / "train_log.jsonl", std::ios::app) << rec.to_json().dump() << '\n';
    nn::save_checkpoint(out_dir_ / "state.ckpt", save_state());
  }
}

void Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!finished()) {
    const std::size_t before = log_.size();
    step();
    if (on_epoch && log_.size() > before) on_epoch(log_.back());
  }
}

double Trainer::dataset_loss(std::span<const data::MixtureExample> examples, Mode mode) const {
  if (examples.empty()) throw std::invalid_argument("dataset_loss: no examples");
  nn::NoGradGuard no_grad;
  const auto params = mode == Mode::kTrain ? params_.clone() : params_;
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t i = 0; i < examples.size(); i += cfg_.batch_size) {
    std::vector<const data::MixtureExample*> items;
    for (std::size_t k = i; k < std::min(examples.size(), i + cfg_.batch_size); ++k) items.push_back(&examples[k]);
    total += batch_loss(params, make_batch<float>(items, frames_), loss_, mode).total.item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

nn::Checkpoint Trainer::save_state() const {
  nn::Checkpoint ckpt = to_checkpoint(params_);
  for (const auto& e : to_checkpoint(best_).entries) ckpt.entries.push_back({"best." + e.name, e.shape, e.values});
  const auto trainable = params_.trainable_tensors();
  for (std::size_t k = 0; k < opt_.v.size(); ++k) {
    ckpt.entries.push_back({"rmsprop.v." + std::to_string(k), trainable[k].shape(), opt_.v[k]});
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : log_) history.push_back(r.to_json());
  ckpt.meta["trainer"] = {{"train_config", cfg_.to_json()},
                          {"loss_config", loss_.to_json()},
                          {"epoch", epoch_},
                          {"step", step_},
                          {"cursor", cursor_},
                          {"order", order_},
                          {"lr", lr_},
                          {"best_val", best_val_},
                          {"has_best", has_best_},
                          {"bad_epochs", bad_epochs_},
                          {"epoch_loss_sum", epoch_loss_sum_},
                          {"epoch_batches", epoch_batches_},
                          {"rng", rng_.state()},
                          {"log", history}};
  return ckpt;
}

void Trainer::load_state(const nn::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("trainer")) throw UnsupportedFormat("checkpoint holds no trainer state");
  const std::size_t n_model = params_.named_tensors().size();
  nn::Checkpoint model, best;
  model.meta = best.meta = ckpt.meta;
  std::vector<const nn::CheckpointEntry*> moments;
  for (const auto& e : ckpt.entries) {
    if (e.name.starts_with("best.")) {
      best.entries.push_back({e.name.substr(5), e.shape, e.values});
    } else if (e.name.starts_with("rmsprop.v.")) {
      moments.push_back(&e);
    } else {
      model.entries.push_back(e);
    }
  }
  if (model.entries.size() != n_model) throw UnsupportedFormat("trainer state: model tensor count mismatch");
  auto params = from_checkpoint<float>(model);
  if (!(params.config == params_.config)) throw UnsupportedFormat("trainer state: model configuration differs");
  const auto& t = ckpt.meta.at("trainer");
  try {
    if (TrainConfig::from_json(t.at("train_config")) != cfg_ || LossConfig::from_json(t.at("loss_config")) != loss_) {
      throw UnsupportedFormat("trainer state: training configuration differs");
    }
    params_ = std::move(params);
    params_.set_requires_grad(true);
    best_ = best.entries.empty() ? params_.clone() : from_checkpoint<float>(best);
    opt_.v.clear();
    for (const auto* e : moments) opt_.v.push_back(e->values);
    epoch_ = t.at("epoch").get<std::size_t>();
    step_ = t.at("step").get<std::size_t>();
    cursor_ = t.at("cursor").get<std::size_t>();
    order_ = t.at("order").get<std::vector<std::size_t>>();
    lr_ = t.at("lr").get<double>();
    best_val_ = t.at("best_val").get<double>();
    has_best_ = t.at("has_best").get<bool>();
    bad_epochs_ = t.at("bad_epochs").get<std::size_t>();
    epoch_loss_sum_ = t.at("epoch_loss_sum").get<double>();
    epoch_batches_ = t.at("epoch_batches").get<std::size_t>();
    rng_.set_state(t.at("rng").get<std::string>());
    log_.clear();
    for (const auto& r : t.at("log")) {
      log_.push_back({r.at("epoch").get<std::size_t>(), r.at("step").get<std::size_t>(), r.at("train_loss").get<double>(),
                      r.at("val_loss").get<double>(), r.at("lr").get<double>(), r.at("wall_time").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw UnsupportedFormat(std::string("trainer state is malformed: ") + e.what());
  }
  if (order_.size() != train_.size()) throw UnsupportedFormat("trainer state: training set size differs");
}

std::vector<data::MixtureExample> load_split(const data::Manifest& manifest, const std::string& split,
                                             const dsp::FrameConfig& frames, double mask_clip) {
  const auto items = manifest.split(split);
  std::vector<data::MixtureExample> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) { out[i] = data::load_example(items[i], frames, mask_clip); });
  return out;
}

#define VSANET_INSTANTIATE_TRAIN(Real)                                                                    \
  template Tensor<Real> l1_loss(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);         \
  template Tensor<Real> mse_loss(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);        \
  template Tensor<Real> bce_loss(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);        \
  template struct RmsProp<Real>;                                                                        \
  template Batch<Real> make_batch<Real>(std::span<const data::MixtureExample* const>,                   \
                                        const dsp::FrameConfig&);                                       \
  template LossParts<Real> batch_loss(const ModelParams<Real>&, const Batch<Real>&, const LossConfig&, Mode);

VSANET_INSTANTIATE_TRAIN(float)
VSANET_INSTANTIATE_TRAIN(double)

#undef VSANET_INSTANTIATE_TRAIN

}  // namespace vsanet::train
