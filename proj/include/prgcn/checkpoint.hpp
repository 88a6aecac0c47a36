#pragma once

#include "prgcn/model.hpp"

#include <cstdint>

// Little-endian checkpoint container: "PRGC" magic, format version, then
// name-indexed float32 blocks (parameters, batch-norm buffers, optional
// momentum), closed by a CRC32 of everything before it.

namespace prgcn {

struct CheckpointBlock {
  enum Kind : std::uint8_t { param = 0, buffer = 1, momentum = 2 };
  std::string name;
  std::uint8_t kind = param;
  std::vector<float> data;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

void write_checkpoint(const std::string& path, const std::vector<CheckpointBlock>& blocks);

// Verifies magic, version, and checksum; truncation or corruption throws
// before any block is returned.
std::vector<CheckpointBlock> read_checkpoint(const std::string& path);

template <typename Scalar>
void save_model(PrGcnModel<Scalar>& model, const std::string& path, bool include_momentum = true) {
  std::vector<CheckpointBlock> blocks;
  auto& reg = model.registry();
  for (auto* p : reg.params) {
    CheckpointBlock b;
    b.name = p->name;
    b.kind = CheckpointBlock::param;
    b.data.resize(static_cast<std::size_t>(p->numel()));
    for (Index i = 0; i < p->numel(); ++i) b.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value.value()[i]);
    blocks.push_back(std::move(b));
    if (include_momentum) {
      CheckpointBlock m;
      m.name = p->name;
      m.kind = CheckpointBlock::momentum;
      m.data.resize(static_cast<std::size_t>(p->numel()));
      for (Index i = 0; i < p->numel(); ++i) m.data[static_cast<std::size_t>(i)] = static_cast<float>(p->momentum[i]);
      blocks.push_back(std::move(m));
    }
  }
  for (auto& [name, t] : reg.buffers) {
    CheckpointBlock b;
    b.name = name;
    b.kind = CheckpointBlock::buffer;
    b.data.resize(static_cast<std::size_t>(t->numel()));
    for (Index i = 0; i < t->numel(); ++i) b.data[static_cast<std::size_t>(i)] = static_cast<float>(t->value()[i]);
    blocks.push_back(std::move(b));
  }
  write_checkpoint(path, blocks);
}

template <typename Scalar>
void load_model(PrGcnModel<Scalar>& model, const std::string& path) {
  auto blocks = read_checkpoint(path);
  std::map<std::pair<std::string, int>, const CheckpointBlock*> index;
  for (const auto& b : blocks) index[{b.name, b.kind}] = &b;
  std::vector<bool> used(blocks.size(), false);
  auto claim = [&](const std::string& name, std::uint8_t kind, Index numel, bool required) -> const CheckpointBlock* {
    auto it = index.find({name, kind});
    if (it == index.end()) {
      if (required)
        throw std::runtime_error("checkpoint: " + path + " is missing block '" + name + "'");
      return nullptr;
    }
    const CheckpointBlock* b = it->second;
    if (static_cast<Index>(b->data.size()) != numel)
      throw std::runtime_error("checkpoint: block '" + name + "' holds " + std::to_string(b->data.size()) +
                               " values, model expects " + std::to_string(numel));
    used[static_cast<std::size_t>(b - blocks.data())] = true;
    return b;
  };

  auto& reg = model.registry();
  for (auto* p : reg.params) {
    const auto* b = claim(p->name, CheckpointBlock::param, p->numel(), true);
    auto& v = p->value.mutable_value();
    for (Index i = 0; i < p->numel(); ++i) v[i] = static_cast<Scalar>(b->data[static_cast<std::size_t>(i)]);
    if (const auto* m = claim(p->name, CheckpointBlock::momentum, p->numel(), false)) {
      for (Index i = 0; i < p->numel(); ++i) p->momentum[i] = static_cast<Scalar>(m->data[static_cast<std::size_t>(i)]);
    } else {
      p->momentum.setZero();
    }
  }
  for (auto& [name, t] : reg.buffers) {
    const auto* b = claim(name, CheckpointBlock::buffer, t->numel(), true);
    auto& v = t->mutable_value();
    for (Index i = 0; i < t->numel(); ++i) v[i] = static_cast<Scalar>(b->data[static_cast<std::size_t>(i)]);
  }
  std::string extra;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (!used[i]) extra += (extra.empty() ? "" : ", ") + blocks[i].name;
  if (!extra.empty())
    throw std::runtime_error("checkpoint: " + path + " holds blocks the model does not declare: " + extra);
}

}  // namespace prgcn
