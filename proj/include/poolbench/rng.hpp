#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace poolbench {

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Collapses a tuple of stream coordinates (seed, sample index, column, ...)
// into a single stream key. Streams with distinct coordinates are
// statistically independent, which is what makes dataset generation
// order-independent and parallel-safe.
inline uint64_t stream_key(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (uint64_t p : parts) {
    h = mix64(h ^ mix64(p));
  }
  return h;
}

// Counter-based deterministic generator (splitmix64 over a keyed counter).
// Cheap to construct, so make a fresh one per (seed, index, ...) stream
// instead of sharing instances.
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : counter_(key) {}

  uint64_t next_u64() { return mix64(counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Fixed-point multiply keeps it branch-free and
  // deterministic; bias is O(n / 2^64).
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller, one deviate per call.
  double normal(double mu, double sigma) {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Inverse-CDF exponential with scale beta (mean beta, variance beta^2).
  double exponential_scale(double beta) {
    return -beta * std::log1p(-next_double());
  }

  template <typename T>
  void shuffle(T* first, size_t n) {
    for (size_t i = n; i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      T tmp = first[i - 1];
      first[i - 1] = first[j];
      first[j] = tmp;
    }
  }

 private:
  uint64_t counter_;
};

}  // namespace poolbench
