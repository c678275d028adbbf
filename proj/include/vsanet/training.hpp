#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsanet/data.hpp"
#include "vsanet/model.hpp"

namespace vsanet::train {

struct LossConfig {
  double lambda_se = 1.0;   // weight of the enhancement loss
  double lambda_vad = 0.1;  // weight of the VAD loss
  double alpha = 1.0;       // mask MSE weight inside the enhancement loss

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
  bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
  double lr = 2e-4;
  double lr_decay = 0.5;
  std::size_t patience_epochs = 6;
  std::size_t batch_size = 16;
  std::size_t epochs = 80;
  /// Stop after this many optimizer steps (0 = run all epochs).
  std::size_t max_steps = 0;
  double rmsprop_rho = 0.99;
  double rmsprop_eps = 1e-8;
  /// Clip applied to the ratio-mask target.
  double mask_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Losses on plain arrays (reference forms)

/// mean |s - s_hat| + alpha * mean (m - m_hat)^2
double loss_se(std::span<const double> s, std::span<const double> s_hat, std::span<const double> m,
               std::span<const double> m_hat, double alpha);
/// Binary cross-entropy with y_hat clamped to [1e-7, 1 - 1e-7].
double loss_vad(std::span<const double> y, std::span<const double> y_hat);
double loss_total(double l_se, double l_vad, const LossConfig& cfg);

inline constexpr double kBceClamp = 1e-7;

// ---------------------------------------------------------------------------
// Differentiable weighted losses. `weight` marks valid elements (0 for
// padding); results are sums over weight * term divided by sum(weight).

template <typename Real>
nn::Tensor<Real> l1_loss(const nn::Tensor<Real>& pred, const nn::Tensor<Real>& target,
                         const nn::Tensor<Real>& weight);
template <typename Real>
nn::Tensor<Real> mse_loss(const nn::Tensor<Real>& pred, const nn::Tensor<Real>& target,
                          const nn::Tensor<Real>& weight);
template <typename Real>
nn::Tensor<Real> bce_loss(const nn::Tensor<Real>& prob, const nn::Tensor<Real>& target,
                          const nn::Tensor<Real>& weight);

// ---------------------------------------------------------------------------
// RMSprop

/// v <- rho v + (1 - rho) g^2;  p <- p - lr g / (sqrt(v) + eps)
void rmsprop_update(std::span<double> params, std::span<const double> grads, std::span<double> v, double lr,
                    double rho = 0.99, double eps = 1e-8);

template <typename Real>
struct RmsProp {
  double rho = 0.99;
  double eps = 1e-8;
  std::vector<std::vector<Real>> v;  // one accumulator per parameter tensor

  /// Applies one update using each tensor's current gradient.
  void step(const std::vector<nn::Tensor<Real>>& params, double lr);
};

// ---------------------------------------------------------------------------
// Batching

template <typename Real>
struct Batch {
  nn::Tensor<Real> noisy_spec;     // [B, 1, F, T]
  nn::Tensor<Real> mask_target;    // [B, 1, F, T]
  nn::Tensor<Real> bin_weight;     // [B, 1, F, T]
  nn::Tensor<Real> clean;          // [B, L]
  nn::Tensor<Real> sample_weight;  // [B, L]
  nn::Tensor<Real> vad_target;     // [B, T]
  nn::Tensor<Real> frame_weight;   // [B, T]
  std::vector<std::size_t> lengths;
};

/// Zero-pads the examples to the longest one; weights mark real content.
template <typename Real>
Batch<Real> make_batch(std::span<const data::MixtureExample* const> examples, const dsp::FrameConfig& frames);

template <typename Real>
struct LossParts {
  nn::Tensor<Real> total;
  double se = 0.0;
  double vad = 0.0;
};

template <typename Real>
LossParts<Real> batch_loss(const ModelParams<Real>& params, const Batch<Real>& batch, const LossConfig& loss,
                           Mode mode);

// ---------------------------------------------------------------------------
// Trainer

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  /// `out_dir` receives train_log.jsonl, best.ckpt and state.ckpt when non-empty.
  Trainer(ModelParams<float> params, TrainConfig cfg, LossConfig loss, std::vector<data::MixtureExample> train,
          std::vector<data::MixtureExample> val, std::filesystem::path out_dir = {});

  /// One optimizer step on the next batch; returns its loss_total. Runs the
  /// end-of-epoch bookkeeping (validation, lr schedule, checkpoints) when the
  /// batch completes an epoch. Throws NumericalError on a non-finite loss.
  double step();
  /// Steps until the epoch budget or max_steps is exhausted.
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});
  bool finished() const;

  /// Mean loss_total over `examples` in batches of batch_size. Train mode
  /// runs on a copy so the running statistics are left untouched.
  double dataset_loss(std::span<const data::MixtureExample> examples, Mode mode) const;

  const ModelParams<float>& params() const { return params_; }
  const ModelParams<float>& best_params() const { return best_; }
  const std::vector<EpochRecord>& log() const { return log_; }
  std::size_t steps() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  double lr() const { return lr_; }

  /// Full training state (parameters, optimizer, schedule, shuffle state).
  nn::Checkpoint save_state() const;
  void load_state(const nn::Checkpoint& ckpt);

 private:
  void begin_epoch();
  void end_epoch();

  ModelParams<float> params_;
  ModelParams<float> best_;
  TrainConfig cfg_;
  LossConfig loss_;
  std::vector<data::MixtureExample> train_;
  std::vector<data::MixtureExample> val_;
  std::filesystem::path out_dir_;
  dsp::FrameConfig frames_;
  RmsProp<float> opt_;
  nn::Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  double lr_ = 0.0;
  double best_val_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
  double epoch_loss_sum_ = 0.0;
  std::size_t epoch_batches_ = 0;
  double wall_start_ = 0.0;
  std::vector<EpochRecord> log_;
};

/// Loads every item of `split` from the manifest.
std::vector<data::MixtureExample> load_split(const data::Manifest& manifest, const std::string& split,
                                             const dsp::FrameConfig& frames, double mask_clip);

}  // namespace vsanet::train
