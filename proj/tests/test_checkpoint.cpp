#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "langsg/checkpoint.hpp"
#include "langsg/errors.hpp"

using namespace langsg;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.fingerprint = "phase=pretrain|backbone=k1/F4|projector=h8/D4";
  c.optimizer_step = 17;
  c.blobs["a.weight"] = Blob{2, 3, {1, 2, 3, 4, 5, 6}};
  c.blobs["adam.m/a.weight"] = Blob{1, 1, {-0.5f}};
  return c;
}

void write_bytes(const std::filesystem::path& p, const std::string& b) { std::ofstream(p, std::ios::binary) << b; }

}  // namespace

TEST_CASE("checkpoint: round trip is exact") {
  const auto dir = testutil::temp_dir("ckpt_rt");
  const Checkpoint c = sample();
  save_checkpoint(c, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == c);
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(testutil::read_bytes(dir / "a.ckpt") == testutil::read_bytes(dir / "b.ckpt"));
}

TEST_CASE("checkpoint: header layout") {
  const auto dir = testutil::temp_dir("ckpt_layout");
  save_checkpoint(sample(), dir / "a.ckpt");
  const auto bytes = testutil::read_bytes(dir / "a.ckpt");
  CHECK(bytes.substr(0, 8) == "L3DCKPT1");
  CHECK(bytes.substr(8, 4) == std::string("\x01\x00\x00\x00", 4));
}

TEST_CASE("checkpoint: wrong version is a checkpoint error") {
  const auto dir = testutil::temp_dir("ckpt_version");
  save_checkpoint(sample(), dir / "a.ckpt");
  auto bytes = testutil::read_bytes(dir / "a.ckpt");
  bytes[8] = 2;
  write_bytes(dir / "b.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "b.ckpt"), CheckpointError);
}

TEST_CASE("checkpoint: truncated or corrupt files are format errors") {
  const auto dir = testutil::temp_dir("ckpt_trunc");
  save_checkpoint(sample(), dir / "a.ckpt");
  const auto bytes = testutil::read_bytes(dir / "a.ckpt");
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 1}) {
    write_bytes(dir / "b.ckpt", bytes.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(dir / "b.ckpt"), FormatError);
  }
  auto magic = bytes;
  magic[0] = 'X';
  write_bytes(dir / "c.ckpt", magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), FormatError);
  write_bytes(dir / "d.ckpt", bytes + "junk");
  CHECK_THROWS_AS(load_checkpoint(dir / "d.ckpt"), FormatError);
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}

TEST_CASE("checkpoint: blob size must match its shape") {
  const auto dir = testutil::temp_dir("ckpt_shape");
  Checkpoint c = sample();
  c.blobs["bad"] = Blob{2, 2, {1, 2, 3}};
  CHECK_THROWS(save_checkpoint(c, dir / "a.ckpt"));
}

TEST_CASE("fingerprint_field: lookup by key") {
  const std::string f = "phase=finetune|backbone=k4/F256|heads=h512/C10/P7";
  CHECK(fingerprint_field(f, "phase") == "finetune");
  CHECK(fingerprint_field(f, "heads") == "h512/C10/P7");
  CHECK(fingerprint_field(f, "projector").empty());
}
