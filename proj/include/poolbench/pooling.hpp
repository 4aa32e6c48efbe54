#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/vector_set.hpp"

namespace poolbench {

// Weights realizing a pooled output as a weighted sum of input rows. Scalar
// mode holds one weight per vector; per-feature mode holds an n x d grid
// (used by max pooling, where ties along a column share weight 1/m).
struct PoolWeights {
  enum class Mode { kScalarPerVector, kVectorPerFeature };
  Mode mode = Mode::kScalarPerVector;
  std::vector<double> weights;  // n, or n x d row-major
};

// Projection matrices for adaptive pooling. All are d x d; heads partition
// the projected space into contiguous d/heads slices.
struct AdaPoolParams {
  size_t d = 0;
  size_t heads = 1;
  std::vector<double> wq;  // d x d
  std::vector<double> wk;
  std::vector<double> wv;

  static AdaPoolParams identity(size_t d, size_t heads = 1) {
    AdaPoolParams p;
    p.d = d;
    p.heads = heads;
    p.wq.assign(d * d, 0.0);
    p.wk.assign(d * d, 0.0);
    p.wv.assign(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) {
      p.wq[i * d + i] = 1.0;
      p.wk[i * d + i] = 1.0;
      p.wv[i * d + i] = 1.0;
    }
    return p;
  }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw ConfigError("adaptive pool: head count must divide dimension");
    }
    if (wq.size() != d * d || wk.size() != d * d || wv.size() != d * d) {
      throw ShapeError("adaptive pool: projection matrices must be d x d");
    }
    check_finite(wq, "adaptive pool W_Q");
    check_finite(wk, "adaptive pool W_K");
    check_finite(wv, "adaptive pool W_V");
  }
};

inline std::vector<double> avg_pool(const VectorSet& x) {
  std::vector<double> out(x.d, 0.0);
  for (size_t i = 0; i < x.n; ++i) {
    auto r = x.row(i);
    for (size_t j = 0; j < x.d; ++j) out[j] += r[j];
  }
  double inv = 1.0 / static_cast<double>(x.n);
  for (double& v : out) v *= inv;
  return out;
}

// Per-feature weights for max pooling; ties along a column each get 1/m.
inline PoolWeights max_pool_weights(const VectorSet& x) {
  PoolWeights w;
  w.mode = PoolWeights::Mode::kVectorPerFeature;
  w.weights.assign(x.n * x.d, 0.0);
  for (size_t j = 0; j < x.d; ++j) {
    double mx = x.data[j];
    for (size_t i = 1; i < x.n; ++i) mx = std::max(mx, x.data[i * x.d + j]);
    size_t m = 0;
    for (size_t i = 0; i < x.n; ++i) m += x.data[i * x.d + j] == mx;
    double share = 1.0 / static_cast<double>(m);
    for (size_t i = 0; i < x.n; ++i)
      if (x.data[i * x.d + j] == mx) w.weights[i * x.d + j] = share;
  }
  return w;
}

inline std::vector<double> max_pool(const VectorSet& x) {
  std::vector<double> out(x.d);
  for (size_t j = 0; j < x.d; ++j) {
    double mx = x.data[j];
    for (size_t i = 1; i < x.n; ++i) mx = std::max(mx, x.data[i * x.d + j]);
    out[j] = mx;
  }
  return out;
}

namespace detail {
// y (1 x d) = x (1 x d) . W (d x d)
inline std::vector<double> project_vec(std::span<const double> x,
                                       const std::vector<double>& w, size_t d) {
  std::vector<double> y(d, 0.0);
  for (size_t i = 0; i < d; ++i) {
    double xi = x[i];
    const double* wi = w.data() + i * d;
    for (size_t j = 0; j < d; ++j) y[j] += xi * wi[j];
  }
  return y;
}
}  // namespace detail

// Softmax attention weights per head: heads x n, rows sum to 1. Relation for
// head h uses the h-th slice of the projected query and keys, scaled by
// 1/sqrt(d/heads).
inline std::vector<double> ada_pool_weights(const VectorSet& x,
                                            std::span<const double> q,
                                            const AdaPoolParams& p) {
  p.validate();
  if (x.d != p.d || q.size() != p.d) {
    throw ShapeError("ada_pool: dimension mismatch");
  }
  size_t hd = p.d / p.heads;
  double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> qp = detail::project_vec(q, p.wq, p.d);
  std::vector<double> scores(p.heads * x.n);
  for (size_t i = 0; i < x.n; ++i) {
    std::vector<double> kp = detail::project_vec(x.row(i), p.wk, p.d);
    for (size_t h = 0; h < p.heads; ++h) {
      double acc = 0.0;
      for (size_t c = 0; c < hd; ++c) acc += qp[h * hd + c] * kp[h * hd + c];
      scores[h * x.n + i] = acc * scl;
    }
  }
  // Row-wise softmax with max subtraction.
  std::vector<double> weights(p.heads * x.n);
  for (size_t h = 0; h < p.heads; ++h) {
    const double* s = scores.data() + h * x.n;
    double* w = weights.data() + h * x.n;
    double mx = s[0];
    for (size_t i = 1; i < x.n; ++i) mx = std::max(mx, s[i]);
    double sum = 0.0;
    for (size_t i = 0; i < x.n; ++i) {
      w[i] = std::exp(s[i] - mx);
      sum += w[i];
    }
    double inv = 1.0 / sum;
    for (size_t i = 0; i < x.n; ++i) w[i] *= inv;
  }
  check_finite(weights, "ada_pool weights");
  return weights;
}

// Cross-attention pooling with a single query: per head, the softmax of
// scaled dot-product relations weights the value projections; head outputs
// are concatenated. No residual here; callers add one where they want it.
inline std::vector<double> ada_pool(const VectorSet& x, std::span<const double> q,
                                    const AdaPoolParams& p) {
  std::vector<double> weights = ada_pool_weights(x, q, p);
  size_t hd = p.d / p.heads;
  std::vector<double> out(p.d, 0.0);
  for (size_t i = 0; i < x.n; ++i) {
    std::vector<double> vp = detail::project_vec(x.row(i), p.wv, p.d);
    for (size_t h = 0; h < p.heads; ++h) {
      double w = weights[h * x.n + i];
      for (size_t c = 0; c < hd; ++c) out[h * hd + c] += w * vp[h * hd + c];
    }
  }
  return out;
}

// Centroid of the masked (signal) rows: weight 1/k on signal, 0 on noise.
inline std::vector<double> signal_optimal_pool(const VectorSet& x) {
  if (!x.signal_mask) throw DomainError("signal_optimal_pool: mask required");
  const std::vector<uint8_t>& mask = *x.signal_mask;
  size_t k = x.signal_count();
  std::vector<double> out(x.d, 0.0);
  for (size_t i = 0; i < x.n; ++i) {
    if (!mask[i]) continue;
    auto r = x.row(i);
    for (size_t j = 0; j < x.d; ++j) out[j] += r[j];
  }
  double inv = 1.0 / static_cast<double>(k);
  for (double& v : out) v *= inv;
  return out;
}

// Mean squared error between a compressed representation and the signal
// rows, averaged over all k*d elements.
inline double signal_loss(const VectorSet& x, std::span<const double> xc) {
  if (!x.signal_mask) throw DomainError("signal_loss: mask required");
  if (xc.size() != x.d) throw ShapeError("signal_loss: representation dim mismatch");
  const std::vector<uint8_t>& mask = *x.signal_mask;
  size_t k = x.signal_count();
  double acc = 0.0;
  for (size_t i = 0; i < x.n; ++i) {
    if (!mask[i]) continue;
    auto r = x.row(i);
    for (size_t j = 0; j < x.d; ++j) {
      double dlt = r[j] - xc[j];
      acc += dlt * dlt;
    }
  }
  return acc / (static_cast<double>(k) * static_cast<double>(x.d));
}

}  // namespace poolbench
