#include "xmar/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace xmar {
namespace {

constexpr char kMagic[4] = {'X', 'M', 'A', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

nlohmann::json array_table(const NamedTensors<float>& arrays) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : arrays) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}});
  }
  return table;
}

}  // namespace

void Checkpoint::add(std::string name, Tensor<float> value) {
  if (has(name)) throw Error("checkpoint: duplicate array '" + name + "'");
  arrays.emplace_back(std::move(name), std::move(value));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  throw ParseError("checkpoint: no array named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = {{"arrays", array_table(ckpt.arrays)}, {"meta", ckpt.meta}};
  const std::string blob = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, blob.size());
  out.insert(out.end(), blob.begin(), blob.end());
  for (const auto& [name, t] : ckpt.arrays) put_floats(out, t.data());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("checkpoint: missing XMAR magic");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint64_t len = get_le(bytes, 8, 8);
  if (len > bytes.size() - 16) throw ParseError("checkpoint: metadata length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad metadata JSON: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::size_t at = 16 + len;
  for (const auto& entry : header.at("arrays")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto n = static_cast<std::size_t>(numel(shape));
    if (entry.value("dtype", "float32") != "float32") throw ParseError("checkpoint: unsupported dtype");
    if (bytes.size() - at < n * 4) throw ParseError("checkpoint: truncated array '" + entry.at("name").get<std::string>() + "'");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at + 4 * i, 4)));
    }
    at += 4 * n;
    ckpt.add(entry.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (at != bytes.size()) throw ParseError("checkpoint: trailing bytes after last array");
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write-then-rename so an interrupted run never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, encode_checkpoint(ckpt));
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string weights_digest(const NamedTensors<float>& arrays) {
  std::vector<std::uint8_t> buf;
  const std::string table = array_table(arrays).dump();
  buf.insert(buf.end(), table.begin(), table.end());
  for (const auto& [name, t] : arrays) put_floats(buf, t.data());
  return sha256_hex(buf);
}

}  // namespace xmar
