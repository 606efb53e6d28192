#include "rigrefine/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace rigrefine {

namespace {

// Host order is little-endian on every supported target; serialize through
// memcpy to keep aliasing defined.
void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw IoError("truncated checkpoint");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

const CheckpointBlock* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

const CheckpointBlock& Checkpoint::at(const std::string& name) const {
  const CheckpointBlock* b = find(name);
  if (!b) throw IoError("checkpoint block '" + name + "' not found");
  return *b;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out;
  out.append("RRCK", 4);
  put_u32(out, ckpt.version);
  for (const auto& block : ckpt.blocks) {
    put_u32(out, static_cast<std::uint32_t>(block.name.size()));
    out.append(block.name);
    put_u32(out, static_cast<std::uint32_t>(block.values.size()));
    const std::size_t bytes = block.values.size() * sizeof(double);
    const std::size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, block.values.data(), bytes);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (data.size() < 8 || data.compare(0, 4, "RRCK") != 0) {
    throw IoError("'" + path.string() + "' is not an RRCK checkpoint");
  }
  pos = 4;
  Checkpoint ckpt;
  ckpt.version = get_u32(data, pos);
  while (pos < data.size()) {
    CheckpointBlock block;
    const std::uint32_t name_len = get_u32(data, pos);
    if (pos + name_len > data.size()) throw IoError("truncated checkpoint");
    block.name.assign(data, pos, name_len);
    pos += name_len;
    const std::uint32_t count = get_u32(data, pos);
    const std::size_t bytes = static_cast<std::size_t>(count) * sizeof(double);
    if (pos + bytes > data.size()) throw IoError("truncated checkpoint");
    block.values.resize(count);
    std::memcpy(block.values.data(), data.data() + pos, bytes);
    pos += bytes;
    ckpt.blocks.push_back(std::move(block));
  }
  return ckpt;
}

}  // namespace rigrefine
