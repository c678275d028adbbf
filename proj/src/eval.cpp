#include "vsanet/eval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vsanet/errors.hpp"
#include "vsanet/metrics.hpp"
#include "vsanet/nn/checkpoint.hpp"
#include "vsanet/nn/gradcheck.hpp"
#include "vsanet/parallel.hpp"

namespace vsanet::eval {

nlohmann::json UtteranceScores::to_json() const {
  return {{"id", id},
          {"si_sdr_db", si_sdr_db},
          {"si_sdr_improvement_db", si_sdr_improvement_db},
          {"seg_snr_db", seg_snr_db},
          {"vad_accuracy", vad_accuracy},
          {"vad_auc", vad_auc}};
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& u : utterances) {
    auto j = u.to_json();
    j["type"] = "utterance";
    out << j.dump() << '\n';
  }
  auto j = aggregate.to_json();
  j["type"] = "aggregate";
  j["utterances"] = utterances.size();
  j["config_hash"] = config_hash;
  j["checkpoint_id"] = checkpoint_id;
  out << j.dump() << '\n';
  return out.str();
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write report " + path.string());
  f << to_jsonl();
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ModelConfig& config) {
  return fnv1a_hex(config.to_json().dump());
}

std::string checkpoint_id(const ModelParams<float>& params) {
  return fnv1a_hex(nn::encode_checkpoint(to_checkpoint(params)));
}

UtteranceScores score(const std::string& id, const data::MixtureExample& ex, const Enhanced& enhanced) {
  const auto& clean = ex.clean.samples;
  if (enhanced.audio.size() != clean.size()) throw std::invalid_argument("score: enhanced length differs from clean");
  if (enhanced.vad.size() != ex.vad.size()) throw std::invalid_argument("score: VAD length differs from labels");
  UtteranceScores s;
  s.id = id;
  s.si_sdr_db = metrics::si_sdr(clean, enhanced.audio.samples);
  s.si_sdr_improvement_db = s.si_sdr_db - metrics::si_sdr(clean, ex.noisy.samples);
  s.seg_snr_db = metrics::seg_snr(clean, enhanced.audio.samples);
  const auto vm = metrics::vad_metrics(ex.vad, enhanced.vad);
  s.vad_accuracy = vm.accuracy;
  s.vad_auc = vm.auc;
  return s;
}

UtteranceScores mean_of(const std::vector<UtteranceScores>& rows) {
  UtteranceScores m;
  m.id = "mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.si_sdr_db += r.si_sdr_db;
    m.si_sdr_improvement_db += r.si_sdr_improvement_db;
    m.seg_snr_db += r.seg_snr_db;
    m.vad_accuracy += r.vad_accuracy;
    m.vad_auc += r.vad_auc;
  }
  const double n = static_cast<double>(rows.size());
  m.si_sdr_db /= n;
  m.si_sdr_improvement_db /= n;
  m.seg_snr_db /= n;
  m.vad_accuracy /= n;
  m.vad_auc /= n;
  return m;
}

EvalReport evaluate(const ModelParams<float>& params, const data::Manifest& manifest, const std::string& split,
                    std::size_t threads) {
  const auto items = manifest.split(split);
  if (items.empty()) throw std::invalid_argument("evaluate: split '" + split + "' has no items");
  const auto frames = params.config.frame_config();
  EvalReport report;
  report.utterances.resize(items.size());
  parallel_for(
      items.size(),
      [&](std::size_t i) {
        const auto ex = data::load_example(items[i], frames, params.config.mask_clip);
        report.utterances[i] = score(items[i].id, ex, enhance(params, ex.noisy));
      },
      threads);
  report.aggregate = mean_of(report.utterances);
  report.config_hash = config_hash(params.config);
  report.checkpoint_id = checkpoint_id(params);
  return report;
}

nlohmann::json GradcheckSummary::to_json() const {
  return {{"max_rel_error", max_rel_error},
          {"worst_tensor", worst_tensor},
          {"max_cancelled_bias_grad", max_cancelled_bias_grad},
          {"checked", checked}};
}

GradcheckSummary gradcheck_model(const ModelConfig& config, std::uint64_t seed, std::size_t per_tensor) {
  config.validate();
  auto p = build_model<double>(config, seed);
  nn::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& nt : p.named_tensors()) {
    for (auto& v : nt.tensor.data()) {
      if (nt.name.ends_with("running_var")) {
        v = rng.uniform(0.5, 2.0);
      } else {
        v += rng.uniform(-0.3, 0.3);
      }
    }
  }
  const std::size_t frames = 6;
  const nn::Shape spec{2, 1, config.dct_size, frames};
  auto uniform_tensor = [&](const nn::Shape& shape, double lo, double hi) {
    nn::Tensor<double> t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
  };
  const auto x = uniform_tensor(spec, -2, 2);
  const auto wm = uniform_tensor(spec, -1, 1);
  const auto wv = uniform_tensor(nn::Shape{2, frames}, -1, 1);
  p.set_requires_grad(true);
  auto loss = [&] {
    const auto out = forward(p, x, Mode::kTrain);
    return nn::add(nn::sum(nn::mul(out.mask, wm)), nn::sum(nn::mul(out.vad, wv)));
  };

  GradcheckSummary s;
  for (const auto& nt : p.named_tensors()) {
    if (!nt.trainable) continue;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < per_tensor; ++k) idx.push_back(rng.below(nt.tensor.size()));
    const auto r = nn::finite_diff_check<double>(loss, nt.tensor, 1e-5, idx);
    s.checked += r.checked;
    if (nt.name.ends_with("conv.bias")) {
      s.max_cancelled_bias_grad =
          std::max({s.max_cancelled_bias_grad, std::abs(r.analytic), std::abs(r.numeric)});
      continue;
    }
    if (r.max_rel_error >= s.max_rel_error) {
      s.max_rel_error = r.max_rel_error;
      s.worst_tensor = nt.name;
    }
  }
  return s;
}

}  // namespace vsanet::eval
