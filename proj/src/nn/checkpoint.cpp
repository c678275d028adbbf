#include "vsanet/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vsanet/errors.hpp"

namespace vsanet::nn {

namespace {

constexpr std::string_view kMagic = "VSANET-CKPT 1";

void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t total = 0;
  for (const auto& e : ckpt.entries) {
    if (numel(e.shape) != e.values.size()) {
      throw std::invalid_argument("checkpoint entry '" + e.name + "' has inconsistent shape");
    }
    header["tensors"].push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", "f32"}});
    total += e.values.size();
  }
  std::string out(kMagic);
  out.push_back('\n');
  out += header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 4 * total);
  for (const auto& e : ckpt.entries) {
    for (float v : e.values) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const auto first = bytes.find('\n');
  if (first == std::string_view::npos || bytes.substr(0, first) != kMagic) {
    throw UnsupportedFormat("not a VSANet checkpoint (bad magic)");
  }
  const auto second = bytes.find('\n', first + 1);
  if (second == std::string_view::npos) throw UnsupportedFormat("checkpoint header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(first + 1, second - first - 1));
  } catch (const nlohmann::json::exception& e) {
    throw UnsupportedFormat(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + second + 1;
  const std::size_t available = bytes.size() - second - 1;
  std::size_t offset = 0;
  try {
    for (const auto& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") {
        throw UnsupportedFormat("checkpoint tensor dtype must be f32");
      }
      CheckpointEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const std::size_t n = numel(e.shape);
      if (offset + 4 * n > available) {
        throw UnsupportedFormat("checkpoint payload is truncated at tensor '" + e.name + "'");
      }
      e.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) e.values[i] = get_f32(payload + offset + 4 * i);
      offset += 4 * n;
      ckpt.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UnsupportedFormat(std::string("checkpoint header is malformed: ") + e.what());
  }
  if (offset != available) throw UnsupportedFormat("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnsupportedFormat("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vsanet::nn
