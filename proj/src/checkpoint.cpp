#include "prgcn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace prgcn {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'R', 'G', 'C'};
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

template <typename T>
void append(std::string& out, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T consume(const std::string& in, std::size_t& pos, const std::string& path) {
  static_assert(std::is_trivially_copyable_v<T>);
  if (pos + sizeof(T) > in.size())
    throw std::runtime_error("checkpoint: " + path + " is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void write_checkpoint(const std::string& path, const std::vector<CheckpointBlock>& blocks) {
  std::string payload;
  payload.append(kMagic.data(), kMagic.size());
  append(payload, kVersion);
  append(payload, static_cast<std::uint64_t>(blocks.size()));
  for (const auto& b : blocks) {
    append(payload, static_cast<std::uint32_t>(b.name.size()));
    payload.append(b.name);
    append(payload, b.kind);
    append(payload, static_cast<std::uint64_t>(b.data.size()));
    payload.append(reinterpret_cast<const char*>(b.data.data()), b.data.size() * sizeof(float));
  }
  std::uint32_t crc = crc32(reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size());
  append(payload, crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<CheckpointBlock> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (raw.size() < kMagic.size() + sizeof(std::uint32_t) * 2)
    throw std::runtime_error("checkpoint: " + path + " is truncated");
  if (std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0)
    throw std::runtime_error("checkpoint: " + path + " has wrong magic bytes");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, raw.data() + raw.size() - sizeof(stored_crc), sizeof(stored_crc));
  std::uint32_t actual = crc32(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size() - sizeof(stored_crc));
  if (stored_crc != actual)
    throw std::runtime_error("checkpoint: " + path + " failed the integrity check (truncated or corrupt)");

  std::size_t pos = kMagic.size();
  std::uint32_t version = consume<std::uint32_t>(raw, pos, path);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: " + path + " has unsupported version " + std::to_string(version));
  std::uint64_t count = consume<std::uint64_t>(raw, pos, path);
  std::vector<CheckpointBlock> blocks;
  blocks.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = consume<std::uint32_t>(raw, pos, path);
    if (pos + name_len > raw.size()) throw std::runtime_error("checkpoint: " + path + " is truncated");
    CheckpointBlock b;
    b.name.assign(raw, pos, name_len);
    pos += name_len;
    b.kind = consume<std::uint8_t>(raw, pos, path);
    std::uint64_t numel = consume<std::uint64_t>(raw, pos, path);
    if (pos + numel * sizeof(float) > raw.size() - sizeof(stored_crc))
      throw std::runtime_error("checkpoint: " + path + " is truncated");
    b.data.resize(numel);
    std::memcpy(b.data.data(), raw.data() + pos, numel * sizeof(float));
    pos += numel * sizeof(float);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

}  // namespace prgcn
