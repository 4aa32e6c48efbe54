#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/dataset.hpp"
#include "poolbench/parallel.hpp"
#include "poolbench/pooling.hpp"
#include "poolbench/rng.hpp"

namespace poolbench {

// Squared Euclidean distances from row `target` to every row. The target's
// own entry is +inf so it never selects itself.
inline std::vector<double> distances_from(std::span<const double> x, size_t n,
                                          size_t d, size_t target) {
  std::vector<double> dist(n);
  const double* t = x.data() + target * d;
  for (size_t i = 0; i < n; ++i) {
    if (i == target) {
      dist[i] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double* r = x.data() + i * d;
    double acc = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double dlt = r[j] - t[j];
      acc += dlt * dlt;
    }
    dist[i] = acc;
  }
  return dist;
}

// Indices of the k nearest rows to `target` (target excluded), Euclidean
// metric, ties broken by lower row index.
inline std::vector<size_t> knn_indices(std::span<const double> x, size_t n,
                                       size_t d, size_t target, size_t k) {
  if (k < 1 || k > n - 1) throw DomainError("knn: k must be in [1, n-1]");
  std::vector<double> dist = distances_from(x, n, d, target);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dist[a] < dist[b]; });
  order.resize(k);
  return order;
}

inline SampleLabel knn_targets_at(std::span<const double> x, size_t n, size_t d,
                                  size_t k, size_t target) {
  if (target >= n) throw DomainError("knn: target index out of range");
  std::vector<size_t> nn = knn_indices(x, n, d, target, k);
  SampleLabel lab;
  lab.target_index = static_cast<uint32_t>(target);
  lab.k = static_cast<uint32_t>(k);
  lab.mask.assign(n, 0);
  lab.y.assign(d, 0.0);
  for (size_t idx : nn) {
    lab.mask[idx] = 1;
    const double* r = x.data() + idx * d;
    for (size_t j = 0; j < d; ++j) lab.y[j] += r[j];
  }
  double inv = 1.0 / static_cast<double>(k);
  for (double& v : lab.y) v *= inv;
  return lab;
}

// Builds the KNN-centroid label for one sample: a uniformly drawn target row,
// the k nearest neighbors as the signal mask, and y as their centroid.
template <typename Rng>
SampleLabel knn_targets(std::span<const double> x, size_t n, size_t d, size_t k,
                        Rng& rng) {
  size_t target = static_cast<size_t>(rng.uniform_index(n));
  return knn_targets_at(x, n, d, k, target);
}

// Column-wise min/max/mean of the set.
inline std::vector<double> aggregation_targets(std::span<const double> x, size_t n,
                                               size_t d, TaskKind kind) {
  std::vector<double> y(d);
  switch (kind) {
    case TaskKind::kMin:
    case TaskKind::kMax: {
      bool take_max = kind == TaskKind::kMax;
      for (size_t j = 0; j < d; ++j) y[j] = x[j];
      for (size_t i = 1; i < n; ++i) {
        const double* r = x.data() + i * d;
        for (size_t j = 0; j < d; ++j)
          y[j] = take_max ? std::max(y[j], r[j]) : std::min(y[j], r[j]);
      }
      break;
    }
    case TaskKind::kAvg: {
      std::fill(y.begin(), y.end(), 0.0);
      for (size_t i = 0; i < n; ++i) {
        const double* r = x.data() + i * d;
        for (size_t j = 0; j < d; ++j) y[j] += r[j];
      }
      for (double& v : y) v /= static_cast<double>(n);
      break;
    }
    case TaskKind::kKnn:
      throw ConfigError("aggregation_targets: knn is not an aggregation kind");
  }
  return y;
}

// Attaches labels for the requested task to every sample of the dataset.
// KNN targets are drawn per (seed, sample); requesting k == n is served as
// k = n - 1 since the target cannot be its own neighbor. Aggregation tasks
// use target_index 0 and mark every row as signal.
inline void label_dataset(Dataset& ds, TaskKind kind, size_t k, uint64_t seed,
                          size_t threads = 0) {
  size_t n = ds.n(), d = ds.d();
  size_t k_eff = k;
  if (kind == TaskKind::kKnn) {
    if (k_eff == n) k_eff = n - 1;
    if (k_eff < 1 || k_eff > n - 1) {
      throw DomainError("label_dataset: k must be in [1, n-1] (n maps to n-1)");
    }
  }
  ds.task = kind;
  ds.labels.assign(ds.count(), SampleLabel{});
  constexpr uint64_t kTargetTag = 0x7A46ULL;
  parallel_for(
      ds.count(),
      [&](size_t i) {
        auto x = ds.sample(i);
        if (kind == TaskKind::kKnn) {
          CounterRng rng(stream_key({seed, i, kTargetTag}));
          size_t target = static_cast<size_t>(rng.uniform_index(n));
          ds.labels[i] = knn_targets_at(x, n, d, k_eff, target);
        } else {
          SampleLabel lab;
          lab.target_index = 0;
          lab.k = static_cast<uint32_t>(n);
          lab.mask.assign(n, 1);
          lab.y = aggregation_targets(x, n, d, kind);
          ds.labels[i] = lab;
        }
      },
      threads);
}

// Per-element MSE between a prediction and the label's target y. This is the
// excess signal loss over the optimum: predicting y exactly scores 0.
inline double prediction_loss(std::span<const double> pred,
                              std::span<const double> y) {
  if (pred.size() != y.size()) throw ShapeError("prediction_loss: dim mismatch");
  double acc = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    double dlt = pred[j] - y[j];
    acc += dlt * dlt;
  }
  return acc / static_cast<double>(y.size());
}

struct BaselineLosses {
  double centroid = 0.0;  // predict the centroid of the whole input set
  double target = 0.0;    // predict the target vector itself
};

// Training-free reference losses over the labeled samples with the given
// indices (all samples when indices is empty).
inline BaselineLosses baseline_losses(const Dataset& ds,
                                      std::span<const size_t> indices = {}) {
  if (ds.labels.size() != ds.count()) {
    throw DomainError("baseline_losses: dataset has no labels");
  }
  size_t n = ds.n(), d = ds.d();
  std::vector<size_t> all;
  if (indices.empty()) {
    all.resize(ds.count());
    std::iota(all.begin(), all.end(), 0);
    indices = all;
  }
  BaselineLosses out;
  std::vector<double> centroid(d);
  for (size_t idx : indices) {
    auto x = ds.sample(idx);
    const SampleLabel& lab = ds.labels[idx];
    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) centroid[j] += x[i * d + j];
    for (double& v : centroid) v /= static_cast<double>(n);
    out.centroid += prediction_loss(centroid, lab.y);
    out.target += prediction_loss(
        std::span<const double>(x).subspan(lab.target_index * d, d), lab.y);
  }
  out.centroid /= static_cast<double>(indices.size());
  out.target /= static_cast<double>(indices.size());
  return out;
}

}  // namespace poolbench
