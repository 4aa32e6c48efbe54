#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/pooling.hpp"
#include "poolbench/rng.hpp"

namespace poolbench {

enum class BenchMethod : uint8_t { kAvg = 0, kMax = 1, kAda = 2, kSignalOptimal = 3 };

inline const char* bench_method_name(BenchMethod m) {
  switch (m) {
    case BenchMethod::kAvg: return "avg";
    case BenchMethod::kMax: return "max";
    case BenchMethod::kAda: return "ada";
    case BenchMethod::kSignalOptimal: return "signal_optimal";
  }
  return "?";
}

inline BenchMethod bench_method_from_name(const std::string& s) {
  if (s == "avg") return BenchMethod::kAvg;
  if (s == "max") return BenchMethod::kMax;
  if (s == "ada") return BenchMethod::kAda;
  if (s == "signal_optimal") return BenchMethod::kSignalOptimal;
  throw ConfigError("unknown bench method: " + s);
}

struct BenchResult {
  BenchMethod method;
  size_t n = 0;
  size_t d = 0;
  size_t repetitions = 0;
  double median_ns = 0.0;
  double slope = 0.0;  // fitted growth exponent in n at this d
};

namespace detail {
inline volatile double bench_sink = 0.0;
}

// Median wall time of one pooling call at each n in n_list (ascending), for
// each d, plus a log-log least-squares slope of time versus n. Ada timings
// include the Q/K/V projections. Two warmups precede the timed repetitions;
// each measurement loops the call often enough to run at least ~1 ms.
inline std::vector<BenchResult> bench_pooling(BenchMethod method,
                                              std::vector<size_t> n_list,
                                              std::vector<size_t> d_list,
                                              size_t repetitions = 11) {
  if (repetitions < 5) throw ConfigError("bench: need at least 5 repetitions");
  if (!std::is_sorted(n_list.begin(), n_list.end())) {
    throw ConfigError("bench: n_list must be ascending");
  }
  using clock = std::chrono::steady_clock;
  std::vector<BenchResult> results;
  for (size_t d : d_list) {
    AdaPoolParams params = AdaPoolParams::identity(d);
    CounterRng prng(stream_key({d, 0xADAULL}));
    for (double& v : params.wq) v = prng.uniform(-1, 1);
    for (double& v : params.wk) v = prng.uniform(-1, 1);
    for (double& v : params.wv) v = prng.uniform(-1, 1);
    std::vector<double> q(d);
    for (double& v : q) v = prng.uniform(-1, 1);

    size_t first_row = results.size();
    for (size_t n : n_list) {
      CounterRng rng(stream_key({n, d}));
      std::vector<double> data(n * d);
      for (double& v : data) v = rng.uniform(-2, 2);
      VectorSet x(n, d, std::move(data));
      std::vector<uint8_t> mask(n, 0);
      for (size_t i = 0; i < n / 2 + 1; ++i) mask[i] = 1;
      x.signal_mask = std::move(mask);

      auto call = [&] {
        switch (method) {
          case BenchMethod::kAvg: return avg_pool(x)[0];
          case BenchMethod::kMax: return max_pool(x)[0];
          case BenchMethod::kAda: return ada_pool(x, q, params)[0];
          case BenchMethod::kSignalOptimal: return signal_optimal_pool(x)[0];
        }
        return 0.0;
      };

      // Calibrate the inner loop to at least ~1 ms per measurement.
      auto est0 = clock::now();
      detail::bench_sink = detail::bench_sink + call();
      double est_ns = static_cast<double>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - est0)
              .count());
      size_t inner = static_cast<size_t>(
          std::max(1.0, std::ceil(1.0e6 / std::max(est_ns, 1.0))));

      for (int w = 0; w < 2; ++w) detail::bench_sink = detail::bench_sink + call();
      std::vector<double> times(repetitions);
      for (size_t rep = 0; rep < repetitions; ++rep) {
        auto t0 = clock::now();
        double acc = 0.0;
        for (size_t it = 0; it < inner; ++it) acc += call();
        auto t1 = clock::now();
        detail::bench_sink = detail::bench_sink + acc;
        times[rep] = static_cast<double>(
                         std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
                             .count()) /
                     static_cast<double>(inner);
      }
      std::sort(times.begin(), times.end());
      BenchResult r;
      r.method = method;
      r.n = n;
      r.d = d;
      r.repetitions = repetitions;
      r.median_ns = times[repetitions / 2];
      results.push_back(r);
    }
    // Least-squares slope of ln(median) on ln(n) across this d's rows.
    size_t rows = results.size() - first_row;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = first_row; i < results.size(); ++i) {
      double lx = std::log(static_cast<double>(results[i].n));
      double ly = std::log(results[i].median_ns);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    double m = static_cast<double>(rows);
    double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    for (size_t i = first_row; i < results.size(); ++i) results[i].slope = slope;
  }
  return results;
}

inline void write_bench_csv(const std::vector<BenchResult>& rows,
                            const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "method,n,d,median_ns,slope\n";
  for (const BenchResult& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.1f,%.4f\n",
                  bench_method_name(r.method), r.n, r.d, r.median_ns, r.slope);
    os << buf;
  }
}

}  // namespace poolbench
