#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/rng.hpp"
#include "poolbench/vector_set.hpp"

namespace poolbench {

enum class DistFamily : uint8_t { kExponential = 0, kGaussian = 1, kUniform = 2 };

enum class ScaleMode : uint8_t { kDivideSqrtD = 0, kMultiplySqrtD = 1 };

// One feature column's distribution. Parameter ranges:
//   gaussian:    mu ~ U(-3,3), sigma ~ U(1,3)
//   exponential: sign in {-1,+1}, shift ~ U(0,3)*sign, lambda ~ U(0.1,2),
//                x ~ Exp(lambda)*sign - shift  (lambda is the scale/mean)
//   uniform:     low ~ U(-3,3), high ~ U(0.2,3) + low
struct FeatureDistSpec {
  DistFamily family = DistFamily::kGaussian;
  double mu = 0.0, sigma = 1.0;        // gaussian
  double lambda = 1.0, shift = 0.0;    // exponential
  double sign = 1.0;
  double low = 0.0, high = 1.0;        // uniform
};

template <typename Rng>
FeatureDistSpec sample_family_params(DistFamily family, Rng& rng) {
  FeatureDistSpec spec;
  spec.family = family;
  switch (family) {
    case DistFamily::kGaussian:
      spec.mu = rng.uniform(-3.0, 3.0);
      spec.sigma = rng.uniform(1.0, 3.0);
      break;
    case DistFamily::kExponential:
      spec.sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
      spec.shift = rng.uniform(0.0, 3.0) * spec.sign;
      spec.lambda = rng.uniform(0.1, 2.0);
      break;
    case DistFamily::kUniform:
      spec.low = rng.uniform(-3.0, 3.0);
      spec.high = rng.uniform(0.2, 3.0) + spec.low;
      break;
  }
  return spec;
}

template <typename Rng>
FeatureDistSpec sample_feature_spec(Rng& rng) {
  auto family = static_cast<DistFamily>(rng.uniform_index(3));
  return sample_family_params(family, rng);
}

template <typename Rng>
double sample_feature_value(const FeatureDistSpec& spec, Rng& rng) {
  switch (spec.family) {
    case DistFamily::kGaussian:
      return rng.normal(spec.mu, spec.sigma);
    case DistFamily::kExponential:
      return rng.exponential_scale(spec.lambda) * spec.sign - spec.shift;
    case DistFamily::kUniform:
      return rng.uniform(spec.low, spec.high);
  }
  throw ConfigError("unknown feature distribution family");
}

template <typename Rng>
void fill_column(const FeatureDistSpec& spec, size_t n, size_t col, size_t d,
                 Rng& rng, std::vector<double>& out) {
  for (size_t i = 0; i < n; ++i) out[i * d + col] = sample_feature_value(spec, rng);
}

// Family labels for the d columns: floor(d/3) of each family, remaining
// columns assigned to distinct families drawn without replacement, then the
// whole order shuffled. Exposed for the even-split tests.
template <typename Rng>
std::vector<DistFamily> column_families(size_t d, Rng& rng) {
  std::vector<DistFamily> fams;
  fams.reserve(d);
  size_t base = d / 3;
  for (int f = 0; f < 3; ++f)
    for (size_t i = 0; i < base; ++i) fams.push_back(static_cast<DistFamily>(f));
  size_t extra = d - base * 3;
  uint8_t pool[3] = {0, 1, 2};
  rng.shuffle(pool, 3);
  for (size_t i = 0; i < extra; ++i) fams.push_back(static_cast<DistFamily>(pool[i]));
  rng.shuffle(fams.data(), fams.size());
  return fams;
}

// One synthetic sample: each column drawn from its own freshly parameterized
// distribution, then every value scaled by sqrt(d) (divide or multiply per
// the scale mode). Streams are keyed by (seed, sample index, column), so any
// sample can be generated independently of the others.
inline VectorSet generate_sample(size_t n, size_t d, uint64_t seed,
                                 uint64_t sample_index,
                                 ScaleMode mode = ScaleMode::kDivideSqrtD) {
  if (n == 0 || d == 0) throw DomainError("generate_sample: n and d must be >= 1");
  constexpr uint64_t kAssignTag = ~0ULL;
  CounterRng assign_rng(stream_key({seed, sample_index, kAssignTag}));
  std::vector<DistFamily> fams = column_families(d, assign_rng);
  std::vector<double> data(n * d);
  for (size_t col = 0; col < d; ++col) {
    CounterRng col_rng(stream_key({seed, sample_index, col}));
    FeatureDistSpec spec = sample_family_params(fams[col], col_rng);
    fill_column(spec, n, col, d, col_rng, data);
  }
  double factor = std::sqrt(static_cast<double>(d));
  if (mode == ScaleMode::kDivideSqrtD) factor = 1.0 / factor;
  for (double& v : data) v *= factor;
  return VectorSet(n, d, std::move(data));
}

}  // namespace poolbench
