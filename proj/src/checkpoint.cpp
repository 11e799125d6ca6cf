#include "langsg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "langsg/binio.hpp"
#include "langsg/errors.hpp"

namespace langsg {

namespace {
constexpr char kCheckpointMagic[8] = {'L', '3', 'D', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  binio::write_le<std::uint32_t>(out, ckpt.version);
  binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(ckpt.fingerprint.size()));
  out.write(ckpt.fingerprint.data(), static_cast<std::streamsize>(ckpt.fingerprint.size()));
  binio::write_le<std::uint64_t>(out, ckpt.optimizer_step);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, blob] : ckpt.blobs) {
    if (blob.data.size() != static_cast<std::size_t>(blob.rows) * blob.cols) {
      throw CheckpointError("blob '" + name + "' has inconsistent shape");
    }
    binio::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_le<std::uint32_t>(out, blob.rows);
    binio::write_le<std::uint32_t>(out, blob.cols);
    for (float v : blob.data) binio::write_le<float>(out, v);
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  std::string magic = binio::read_bytes(in, 8, "checkpoint magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) throw FormatError(path.string() + ": bad checkpoint magic");
  ckpt.version = binio::read_le<std::uint32_t>(in, "checkpoint version");
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(ckpt.version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto fp_len = binio::read_le<std::uint16_t>(in, "fingerprint length");
  ckpt.fingerprint = binio::read_bytes(in, fp_len, "fingerprint");
  ckpt.optimizer_step = binio::read_le<std::uint64_t>(in, "optimizer step");
  const auto count = binio::read_le<std::uint32_t>(in, "blob count");
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name_len = binio::read_le<std::uint16_t>(in, "blob name length");
    std::string name = binio::read_bytes(in, name_len, "blob name");
    Blob blob;
    blob.rows = binio::read_le<std::uint32_t>(in, "blob rows");
    blob.cols = binio::read_le<std::uint32_t>(in, "blob cols");
    blob.data.resize(static_cast<std::size_t>(blob.rows) * blob.cols);
    for (auto& v : blob.data) v = binio::read_le<float>(in, "blob data");
    ckpt.blobs.emplace(std::move(name), std::move(blob));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes in checkpoint");
  return ckpt;
}

std::string fingerprint_field(const std::string& fingerprint, const std::string& key) {
  std::size_t pos = 0;
  while (pos <= fingerprint.size()) {
    std::size_t end = fingerprint.find('|', pos);
    if (end == std::string::npos) end = fingerprint.size();
    std::string part = fingerprint.substr(pos, end - pos);
    if (part.starts_with(key + "=")) return part.substr(key.size() + 1);
    pos = end + 1;
  }
  return {};
}

}  // namespace langsg
