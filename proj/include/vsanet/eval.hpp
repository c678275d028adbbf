#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vsanet/data.hpp"
#include "vsanet/model.hpp"

namespace vsanet::eval {

struct UtteranceScores {
  std::string id;
  double si_sdr_db = 0.0;
  double si_sdr_improvement_db = 0.0;
  double seg_snr_db = 0.0;
  double vad_accuracy = 0.0;
  double vad_auc = 0.0;

  nlohmann::json to_json() const;
};

struct EvalReport {
  std::vector<UtteranceScores> utterances;  // manifest order
  UtteranceScores aggregate;                // mean of the rows, id "mean"
  std::string config_hash;
  std::string checkpoint_id;

  /// One record per utterance followed by the aggregate record.
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;
};

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string config_hash(const ModelConfig& config);
/// Hash of the serialized checkpoint bytes.
std::string checkpoint_id(const ModelParams<float>& params);

/// Scores one utterance: enhanced output against the clean reference, SI-SDR
/// improvement over the unprocessed mixture, VAD scores against labels.
UtteranceScores score(const std::string& id, const data::MixtureExample& ex, const Enhanced& enhanced);

/// Mean of every metric column.
UtteranceScores mean_of(const std::vector<UtteranceScores>& rows);

/// Enhances every item of the split in parallel; row order follows the manifest.
EvalReport evaluate(const ModelParams<float>& params, const data::Manifest& manifest, const std::string& split,
                    std::size_t threads = 0);

struct GradcheckSummary {
  double max_rel_error = 0.0;  // over every checked trainable element
  std::string worst_tensor;
  /// Largest |gradient| among biases feeding batch norm, which batch
  /// statistics cancel; compared in absolute terms.
  double max_cancelled_bias_grad = 0.0;
  std::size_t checked = 0;

  nlohmann::json to_json() const;
};

inline constexpr double kModelGradTolerance = 1e-3;
inline constexpr double kCancelledBiasTolerance = 1e-7;

/// Finite-difference check of the whole model in 64-bit train mode with
/// jittered weights (so attention and batch-norm paths are non-trivial):
/// `per_tensor` random elements of every trainable tensor.
GradcheckSummary gradcheck_model(const ModelConfig& config, std::uint64_t seed, std::size_t per_tensor = 3);

}  // namespace vsanet::eval
