#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rigrefine/errors.hpp"

namespace rigrefine {

// Named little-endian f64 blocks in an "RRCK" container:
//   magic "RRCK", version u32, then per block
//   (name length u32, name bytes, value count u32, f64 values).
struct CheckpointBlock {
  std::string name;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const;
  const CheckpointBlock& at(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace rigrefine
