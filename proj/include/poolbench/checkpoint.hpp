#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/encoder.hpp"

namespace poolbench {

inline constexpr char kCheckpointMagic[8] = {'P', 'B', 'C', 'K', 'P', 'T', 0, 1};
inline constexpr uint32_t kCheckpointVersion = 1;

// Checkpoint layout (little-endian): magic[8], u32 version, u32 block_count,
// then per block: u32 name_len, name bytes, u32 ndim, u64 dims[ndim],
// f64 payload. Round trips are bit-exact.
inline void save_checkpoint(const std::string& path, const ModelState& st) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  uint32_t version = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  uint32_t count = static_cast<uint32_t>(st.params.size());
  os.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (size_t i = 0; i < st.params.size(); ++i) {
    const std::string& name = st.names[i];
    const Tensor& p = st.params[i];
    uint32_t name_len = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&name_len), sizeof name_len);
    os.write(name.data(), name_len);
    uint32_t ndim = static_cast<uint32_t>(p.shape().size());
    os.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
    for (size_t e : p.shape()) {
      uint64_t ext = e;
      os.write(reinterpret_cast<const char*>(&ext), sizeof ext);
    }
    os.write(reinterpret_cast<const char*>(p.data().data()),
             static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path);
}

// Loads parameters into a freshly initialized model for the given config.
// Every block must match an existing parameter's name and shape, and every
// parameter must be covered.
inline ModelState load_checkpoint(const std::string& path, const EncoderConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw FormatError("not a checkpoint file (bad magic): " + path);
  }
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!is || version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version");
  }
  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!is) throw CorruptionError("checkpoint truncated in header");

  ModelState st = ModelState::init(cfg);
  if (count != st.params.size()) {
    throw FormatError("checkpoint parameter count does not match config");
  }
  std::vector<uint8_t> seen(st.params.size(), 0);
  for (uint32_t b = 0; b < count; ++b) {
    uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    if (!is || name_len > 4096) throw CorruptionError("checkpoint truncated in block");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), sizeof ndim);
    if (!is || ndim > 8) throw CorruptionError("checkpoint truncated in block");
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) {
      uint64_t ext = 0;
      is.read(reinterpret_cast<char*>(&ext), sizeof ext);
      shape[i] = static_cast<size_t>(ext);
    }
    if (!is) throw CorruptionError("checkpoint truncated in block");
    auto it = st.index.find(name);
    if (it == st.index.end()) {
      throw FormatError("checkpoint block does not match config: " + name);
    }
    Tensor& p = st.params[it->second];
    if (p.shape() != shape) {
      throw FormatError("checkpoint shape mismatch for " + name);
    }
    is.read(reinterpret_cast<char*>(p.mutable_data().data()),
            static_cast<std::streamsize>(p.numel() * sizeof(double)));
    if (!is) throw CorruptionError("checkpoint truncated in payload of " + name);
    check_finite(p.data(), "checkpoint payload");
    seen[it->second] = 1;
  }
  for (size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw FormatError("checkpoint missing parameter: " + st.names[i]);
  }
  return st;
}

}  // namespace poolbench
