#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rigrefine/checkpoint.hpp"
#include "rigrefine/rng.hpp"

using namespace rigrefine;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "rigrefine_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  CounterRng rng(1);
  Checkpoint ckpt;
  ckpt.version = 3;
  for (int b = 0; b < 5; ++b) {
    CheckpointBlock block;
    block.name = "block/" + std::to_string(b);
    for (int i = 0; i < 17 * (b + 1); ++i) block.values.push_back(rng.next_normal() * 1e3);
    ckpt.blocks.push_back(block);
  }
  ckpt.blocks.push_back({"empty", {}});

  const fs::path path = temp_file("roundtrip.rrck");
  write_checkpoint(path, ckpt);
  const Checkpoint back = read_checkpoint(path);

  REQUIRE(back.version == ckpt.version);
  REQUIRE(back.blocks.size() == ckpt.blocks.size());
  for (std::size_t b = 0; b < back.blocks.size(); ++b) {
    CHECK(back.blocks[b].name == ckpt.blocks[b].name);
    REQUIRE(back.blocks[b].values.size() == ckpt.blocks[b].values.size());
    for (std::size_t i = 0; i < back.blocks[b].values.size(); ++i) {
      CHECK(back.blocks[b].values[i] == ckpt.blocks[b].values[i]);
    }
  }

  CHECK(back.find("block/2") != nullptr);
  CHECK(back.find("missing") == nullptr);
  CHECK_THROWS_AS(back.at("missing"), IoError);
}

TEST_CASE("checkpoint writes are byte-stable") {
  Checkpoint ckpt;
  ckpt.blocks.push_back({"a", {1.0, 2.0, -3.5}});
  const fs::path p1 = temp_file("stable1.rrck");
  const fs::path p2 = temp_file("stable2.rrck");
  write_checkpoint(p1, ckpt);
  write_checkpoint(p2, ckpt);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.substr(0, 4) == "RRCK");
}

TEST_CASE("checkpoint rejects corrupt input") {
  const fs::path bad = temp_file("bad.rrck");
  {
    std::ofstream f(bad, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(read_checkpoint(bad), IoError);

  const fs::path trunc = temp_file("trunc.rrck");
  {
    Checkpoint ckpt;
    ckpt.blocks.push_back({"a", {1.0, 2.0, 3.0}});
    write_checkpoint(trunc, ckpt);
    // Chop the tail off.
    std::ifstream in(trunc, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(trunc, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size() - 7));
  }
  CHECK_THROWS_AS(read_checkpoint(trunc), IoError);
  CHECK_THROWS_AS(read_checkpoint(temp_file("does_not_exist.rrck")), IoError);
}
