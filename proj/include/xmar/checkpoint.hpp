#pragma once

// XMAR checkpoint container, shared by victims, programs, and dataset caches.
//
//   bytes 0..3    "XMAR"
//   bytes 4..7    format version, u32 little-endian
//   bytes 8..15   length L of the metadata blob, u64 little-endian
//   next L bytes  UTF-8 JSON: {"arrays": [{"name", "shape", "dtype"}...], "meta": {...}}
//   then          each array as row-major little-endian float32, in "arrays" order

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xmar/tensor.hpp"

namespace xmar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  NamedTensors<float> arrays;

  void add(std::string name, Tensor<float> value);
  bool has(const std::string& name) const;
  const Tensor<float>& array(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

// SHA-256 over the serialized arrays (names, shapes, float32 payloads).
// Used as the victim weight checksum.
std::string weights_digest(const NamedTensors<float>& arrays);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace xmar
