#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vsanet/nn/tensor.hpp"

namespace vsanet::nn {

// Container layout:
//   line 1: "VSANET-CKPT 1"
//   line 2: compact JSON {"meta": {...}, "tensors": [{"name", "shape", "dtype": "f32"}, ...]}
//   payload: every tensor's values as little-endian float32, in header order.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws UnsupportedFormat on a malformed container.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Real>
CheckpointEntry make_entry(std::string name, const Tensor<Real>& t) {
  auto d = t.data();
  return {std::move(name), t.shape(), std::vector<float>(d.begin(), d.end())};
}

}  // namespace vsanet::nn
