#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "poolbench/common.hpp"

namespace poolbench {

// A set of n vectors of dimension d, row-major, with an optional signal mask
// partitioning rows into signal (1) and noise (0), and an optional
// distinguished target row.
struct VectorSet {
  size_t n = 0;
  size_t d = 0;
  std::vector<double> data;                           // n x d
  std::optional<std::vector<uint8_t>> signal_mask;    // length n, values 0/1
  std::optional<size_t> target_index;

  VectorSet() = default;
  VectorSet(size_t n_, size_t d_, std::vector<double> rows)
      : n(n_), d(d_), data(std::move(rows)) {
    validate();
  }

  std::span<const double> row(size_t i) const {
    return std::span<const double>(data).subspan(i * d, d);
  }

  size_t signal_count() const {
    if (!signal_mask) throw DomainError("vector set has no signal mask");
    size_t k = 0;
    for (uint8_t b : *signal_mask) k += b != 0;
    return k;
  }

  void validate() const {
    if (n == 0 || d == 0) throw ShapeError("vector set must be non-empty");
    if (data.size() != n * d) throw ShapeError("vector set data length mismatch");
    check_finite(data, "vector set");
    if (signal_mask) {
      if (signal_mask->size() != n) throw ShapeError("signal mask length mismatch");
      size_t k = signal_count();
      if (k == 0 || k > n) throw DomainError("signal mask must select 1..n rows");
    }
    if (target_index && *target_index >= n) {
      throw DomainError("target index out of range");
    }
  }
};

}  // namespace poolbench
