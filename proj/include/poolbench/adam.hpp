#pragma once

#include <cmath>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/tensor.hpp"

namespace poolbench {

struct AdamConfig {
  double lr = 5.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1.0e-8;
};

// Per-parameter first/second moments plus the shared step counter.
struct AdamState {
  AdamConfig cfg;
  size_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState init(const std::vector<Tensor>& params, AdamConfig cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
    return st;
  }
};

// One bias-corrected Adam update, reading each parameter's accumulated
// gradient. Parameters with no populated gradient are treated as grad == 0.
// Gradients are cleared afterwards so the next backward starts fresh.
inline void adam_step(std::vector<Tensor>& params, AdamState& st) {
  if (params.size() != st.m.size()) {
    throw ShapeError("adam_step: state does not match parameter list");
  }
  st.t += 1;
  double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.t));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    if (param.numel() != st.m[p].size()) {
      throw ShapeError("adam_step: parameter shape changed under the optimizer");
    }
    const double* g = param.has_grad() ? param.grad().data() : nullptr;
    std::vector<double>& m = st.m[p];
    std::vector<double>& v = st.v[p];
    std::vector<double>& w = param.mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      double gi = g ? g[i] : 0.0;
      m[i] = st.cfg.beta1 * m[i] + (1.0 - st.cfg.beta1) * gi;
      v[i] = st.cfg.beta2 * v[i] + (1.0 - st.cfg.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
    check_finite(w, "adam_step");
    param.zero_grad();
  }
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace poolbench
