#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace poolbench {

// Error taxonomy. Everything derives from Error so callers can catch the
// whole family; the CLI maps ValidationError-ish types to exit code 1 and
// verification failures to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches between tensors or matrices.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration values (bad pool method, indivisible head count, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Argument outside its mathematical domain (k out of range, empty partition).
struct DomainError : Error {
  using Error::Error;
};

// Unrecognized magic/version when parsing a file.
struct FormatError : Error {
  using Error::Error;
};

// Recognized file that ends early or contradicts its own header.
struct CorruptionError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// A verification run (bound sweep, corollary check, slope window) found a
// genuine counterexample. The CLI maps this to exit code 2.
struct VerificationFailure : Error {
  using Error::Error;
};

// Screens with a vector-friendly sum (NaN/Inf poison the sum), scanning
// element-wise only when the screen trips.
inline void check_finite(std::span<const double> values, const char* what) {
  const double* p = values.data();
  size_t n = values.size();
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += p[i];
    a1 += p[i + 1];
    a2 += p[i + 2];
    a3 += p[i + 3];
  }
  for (; i < n; ++i) a0 += p[i];
  if (std::isfinite(a0 + a1 + a2 + a3)) return;
  for (size_t j = 0; j < n; ++j) {
    if (!std::isfinite(p[j])) {
      throw NumericError(std::string(what) + ": non-finite value encountered");
    }
  }
  // The sum overflowed on huge-but-finite values; nothing to flag.
}

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace poolbench
