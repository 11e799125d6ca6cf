#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace langsg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;

  bool operator==(const Blob&) const = default;
};

/// Named float32 tensors plus the architecture fingerprint they belong to.
/// Optimizer moments live in the same blob map under "adam.m/" and "adam.v/".
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string fingerprint;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, Blob> blobs;

  bool operator==(const Checkpoint&) const = default;
};

/// Layout (little-endian): "L3DCKPT1", u32 version, u16 fingerprint length,
/// fingerprint bytes, u64 optimizer step, u32 blob count, then per blob
/// u16 name length, name, u32 rows, u32 cols, rows*cols float32.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a version mismatch and FormatError on a
/// truncated or corrupt file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fingerprints are "phase=<p>|backbone=<...>|<head>=<...>".
std::string fingerprint_field(const std::string& fingerprint, const std::string& key);

}  // namespace langsg
