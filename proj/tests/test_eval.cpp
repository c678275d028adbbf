#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "vsanet/eval.hpp"
#include "vsanet/metrics.hpp"

using namespace vsanet;

namespace {

data::Manifest tiny_corpus(const std::filesystem::path& dir) {
  data::SynthConfig sc;
  sc.num_train = 1;
  sc.num_val = 1;
  sc.num_test = 4;
  sc.duration_s = 0.8;
  sc.min_gap_s = 0.1;
  sc.min_activity = 0.2;
  return data::synth_dataset(sc, 5, dir);
}

}  // namespace

TEST_CASE("evaluation report rows, aggregate and identity") {
  const auto dir = std::filesystem::temp_directory_path() / "vsanet_test_eval";
  std::filesystem::remove_all(dir);
  const auto manifest = tiny_corpus(dir);
  const auto params = build_model<float>(ModelConfig::toy(), 1);

  const auto a = eval::evaluate(params, manifest, "test", 4);
  const auto b = eval::evaluate(params, manifest, "test", 1);
  REQUIRE(a.utterances.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.utterances[i].id == manifest.split("test")[i].id);
    CHECK(a.utterances[i].to_json() == b.utterances[i].to_json());
    CHECK(a.utterances[i].vad_accuracy >= 0.0);
    CHECK(a.utterances[i].vad_accuracy <= 1.0);
    CHECK(a.utterances[i].vad_auc >= 0.0);
    CHECK(a.utterances[i].vad_auc <= 1.0);
  }
  double sum = 0.0;
  for (const auto& u : a.utterances) sum += u.si_sdr_improvement_db;
  CHECK(a.aggregate.si_sdr_improvement_db == sum / 4.0);
  CHECK(eval::mean_of(a.utterances).to_json() == a.aggregate.to_json());

  CHECK(a.config_hash == eval::config_hash(ModelConfig::toy()));
  CHECK(a.checkpoint_id == eval::checkpoint_id(params));
  CHECK(a.checkpoint_id != eval::checkpoint_id(build_model<float>(ModelConfig::toy(), 2)));
  CHECK(a.config_hash != eval::config_hash(ModelConfig{}));

  std::istringstream lines(a.to_jsonl());
  std::size_t n = 0;
  nlohmann::json last;
  for (std::string line; std::getline(lines, line); ++n) last = nlohmann::json::parse(line);
  CHECK(n == 5);
  CHECK(last["type"] == "aggregate");
  CHECK(last["checkpoint_id"] == a.checkpoint_id);

  CHECK_THROWS_AS(eval::evaluate(params, manifest, "nothing"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("scoring an oracle output") {
  data::SynthConfig sc;
  sc.duration_s = 0.5;
  sc.min_gap_s = 0.1;
  sc.min_activity = 0.2;
  auto [clean, noise] = data::synth_item(sc, 3, data::NoiseType::kPink, 0.0);
  const auto frames = ModelConfig::toy().frame_config();
  const auto ex = data::make_example(clean, noise, 0.0, frames, 1.0);
  Enhanced perfect;
  perfect.audio = ex.clean;
  perfect.vad.assign(ex.vad.begin(), ex.vad.end());
  const auto s = eval::score("x", ex, perfect);
  CHECK(s.si_sdr_db == metrics::kSiSdrCapDb);
  CHECK(s.si_sdr_improvement_db > 0.0);
  CHECK(s.vad_accuracy == 1.0);
  CHECK(s.seg_snr_db == 35.0);
  CHECK(eval::fnv1a_hex("") == "cbf29ce484222325");
  CHECK(eval::fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("whole-model gradient check summary") {
  const auto s = eval::gradcheck_model(ModelConfig::toy(), 3, 2);
  CHECK(s.checked > 50);
  CHECK(s.max_rel_error < eval::kModelGradTolerance);
  CHECK(s.max_cancelled_bias_grad < eval::kCancelledBiasTolerance);
  CHECK(!s.worst_tensor.empty());
}
