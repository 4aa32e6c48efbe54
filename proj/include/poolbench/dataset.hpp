#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolbench/common.hpp"
#include "poolbench/datagen.hpp"
#include "poolbench/parallel.hpp"
#include "poolbench/vector_set.hpp"

namespace poolbench {

inline constexpr char kDatasetMagic[8] = {'P', 'B', 'S', 'E', 'T', 0, 0, 1};
inline constexpr char kLabelMagic[8] = {'P', 'B', 'L', 'B', 'L', 0, 0, 1};
inline constexpr uint32_t kDatasetVersion = 1;

enum class TaskKind : uint8_t { kKnn = 0, kMin = 1, kMax = 2, kAvg = 3 };

struct DatasetHeader {
  uint32_t version = kDatasetVersion;
  uint64_t sample_count = 0;
  uint32_t n = 0;
  uint32_t d = 0;
  uint64_t seed = 0;
  ScaleMode scale_mode = ScaleMode::kDivideSqrtD;
};

// Supervised labels for one sample. The mask marks the signal rows (for the
// KNN task, the k nearest neighbors of the target; the target itself is
// excluded). y is the regression target.
struct SampleLabel {
  uint32_t target_index = 0;
  uint32_t k = 0;
  std::vector<double> y;
  std::vector<uint8_t> mask;  // length n, values 0/1
};

// A persisted collection of vector sets. Values are held as f64 but are
// exactly f32-representable (narrowed at generation), so file round trips
// are bit-exact in both directions.
struct Dataset {
  DatasetHeader header;
  std::vector<double> data;  // sample_count x n x d

  std::optional<TaskKind> task;
  std::vector<SampleLabel> labels;  // empty or sample_count entries

  size_t count() const { return header.sample_count; }
  size_t n() const { return header.n; }
  size_t d() const { return header.d; }

  std::span<const double> sample(size_t i) const {
    size_t stride = static_cast<size_t>(header.n) * header.d;
    return std::span<const double>(data).subspan(i * stride, stride);
  }

  VectorSet sample_set(size_t i) const {
    auto s = sample(i);
    VectorSet vs(header.n, header.d, std::vector<double>(s.begin(), s.end()));
    if (!labels.empty()) {
      vs.signal_mask = labels[i].mask;
      vs.target_index = labels[i].target_index;
    }
    return vs;
  }
};

inline Dataset generate_dataset(size_t count, size_t n, size_t d, uint64_t seed,
                                ScaleMode mode = ScaleMode::kDivideSqrtD,
                                size_t threads = 0) {
  if (count == 0) throw DomainError("generate_dataset: count must be >= 1");
  Dataset ds;
  ds.header.sample_count = count;
  ds.header.n = static_cast<uint32_t>(n);
  ds.header.d = static_cast<uint32_t>(d);
  ds.header.seed = seed;
  ds.header.scale_mode = mode;
  size_t stride = n * d;
  ds.data.resize(count * stride);
  parallel_for(
      count,
      [&](size_t i) {
        VectorSet vs = generate_sample(n, d, seed, i, mode);
        double* out = ds.data.data() + i * stride;
        // Canonical values are the on-disk f32s, widened.
        for (size_t j = 0; j < stride; ++j)
          out[j] = static_cast<double>(static_cast<float>(vs.data[j]));
      },
      threads);
  return ds;
}

// ---------------------------------------------------------------------------
// Binary format (little-endian):
//   magic[8] "PBSET\0\0\x01", u32 version, u64 sample_count, u32 N, u32 d,
//   u64 seed, u8 scale_mode, then sample_count contiguous N*d f32 blocks.
// Labeled datasets append: magic[8] "PBLBL\0\0\x01", u8 task_kind, u32 k,
// then per sample: u32 target_index, u32 k, f32 y[d], mask bitset
// (ceil(N/8) bytes, LSB-first).
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::istream& is, T& v, const char* what) {
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CorruptionError(std::string("dataset file truncated in ") + what);
}

}  // namespace detail

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kDatasetMagic, sizeof kDatasetMagic);
  detail::write_pod(os, ds.header.version);
  detail::write_pod(os, ds.header.sample_count);
  detail::write_pod(os, ds.header.n);
  detail::write_pod(os, ds.header.d);
  detail::write_pod(os, ds.header.seed);
  detail::write_pod(os, static_cast<uint8_t>(ds.header.scale_mode));
  std::vector<float> block(ds.n() * ds.d());
  for (size_t i = 0; i < ds.count(); ++i) {
    auto s = ds.sample(i);
    for (size_t j = 0; j < block.size(); ++j) block[j] = static_cast<float>(s[j]);
    os.write(reinterpret_cast<const char*>(block.data()),
             static_cast<std::streamsize>(block.size() * sizeof(float)));
  }
  if (ds.task) {
    if (ds.labels.size() != ds.count()) {
      throw ShapeError("write_dataset: label count mismatch");
    }
    os.write(kLabelMagic, sizeof kLabelMagic);
    detail::write_pod(os, static_cast<uint8_t>(*ds.task));
    uint32_t k0 = ds.labels.empty() ? 0 : ds.labels[0].k;
    detail::write_pod(os, k0);
    size_t mask_bytes = (ds.n() + 7) / 8;
    std::vector<uint8_t> bits(mask_bytes);
    std::vector<float> yb(ds.d());
    for (const SampleLabel& lab : ds.labels) {
      detail::write_pod(os, lab.target_index);
      detail::write_pod(os, lab.k);
      for (size_t j = 0; j < yb.size(); ++j) yb[j] = static_cast<float>(lab.y[j]);
      os.write(reinterpret_cast<const char*>(yb.data()),
               static_cast<std::streamsize>(yb.size() * sizeof(float)));
      std::fill(bits.begin(), bits.end(), 0);
      for (size_t i = 0; i < lab.mask.size(); ++i)
        if (lab.mask[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
      os.write(reinterpret_cast<const char*>(bits.data()),
               static_cast<std::streamsize>(bits.size()));
    }
  }
  if (!os) throw IoError("write failed: " + path);
  os.close();
  if (!os) throw IoError("write failed on close: " + path);
}

inline nlohmann::json dataset_header_json(const DatasetHeader& h) {
  return nlohmann::json{{"magic", "PBSET"},
                        {"version", h.version},
                        {"sample_count", h.sample_count},
                        {"n", h.n},
                        {"d", h.d},
                        {"seed", h.seed},
                        {"scale_mode", h.scale_mode == ScaleMode::kDivideSqrtD
                                           ? "divide_sqrt_d"
                                           : "multiply_sqrt_d"}};
}

// Human-readable mirror of the binary header.
inline void write_dataset_sidecar(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << dataset_header_json(ds.header).dump(2) << "\n";
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) {
    throw FormatError("not a dataset file (bad magic): " + path);
  }
  Dataset ds;
  detail::read_pod(is, ds.header.version, "header");
  if (ds.header.version != kDatasetVersion) {
    throw FormatError("unsupported dataset version");
  }
  detail::read_pod(is, ds.header.sample_count, "header");
  detail::read_pod(is, ds.header.n, "header");
  detail::read_pod(is, ds.header.d, "header");
  detail::read_pod(is, ds.header.seed, "header");
  uint8_t mode = 0;
  detail::read_pod(is, mode, "header");
  if (mode > 1) throw FormatError("unknown scale mode");
  ds.header.scale_mode = static_cast<ScaleMode>(mode);
  if (ds.header.sample_count == 0 || ds.header.n == 0 || ds.header.d == 0) {
    throw FormatError("dataset header has zero counts");
  }
  size_t stride = static_cast<size_t>(ds.header.n) * ds.header.d;
  ds.data.resize(ds.header.sample_count * stride);
  std::vector<float> block(stride);
  for (size_t i = 0; i < ds.header.sample_count; ++i) {
    is.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (!is) throw CorruptionError("dataset payload shorter than header claims");
    double* out = ds.data.data() + i * stride;
    for (size_t j = 0; j < stride; ++j) out[j] = static_cast<double>(block[j]);
  }
  // Optional label section.
  char lmagic[8];
  is.read(lmagic, sizeof lmagic);
  if (is.gcount() == 0) return ds;  // unlabeled
  if (is.gcount() != sizeof lmagic ||
      std::memcmp(lmagic, kLabelMagic, sizeof lmagic) != 0) {
    throw CorruptionError("trailing bytes are not a label section");
  }
  uint8_t kind = 0;
  detail::read_pod(is, kind, "label header");
  if (kind > 3) throw FormatError("unknown task kind in label section");
  ds.task = static_cast<TaskKind>(kind);
  uint32_t k0 = 0;
  detail::read_pod(is, k0, "label header");
  size_t mask_bytes = (ds.header.n + 7) / 8;
  ds.labels.resize(ds.header.sample_count);
  std::vector<float> yb(ds.header.d);
  std::vector<uint8_t> bits(mask_bytes);
  for (SampleLabel& lab : ds.labels) {
    detail::read_pod(is, lab.target_index, "labels");
    detail::read_pod(is, lab.k, "labels");
    is.read(reinterpret_cast<char*>(yb.data()),
            static_cast<std::streamsize>(yb.size() * sizeof(float)));
    is.read(reinterpret_cast<char*>(bits.data()),
            static_cast<std::streamsize>(bits.size()));
    if (!is) throw CorruptionError("label section truncated");
    lab.y.resize(ds.header.d);
    for (size_t j = 0; j < yb.size(); ++j) lab.y[j] = static_cast<double>(yb[j]);
    lab.mask.assign(ds.header.n, 0);
    for (size_t i = 0; i < lab.mask.size(); ++i)
      lab.mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
  }
  return ds;
}

}  // namespace poolbench
