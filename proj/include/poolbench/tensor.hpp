#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/rng.hpp"

namespace poolbench {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Dense f64 tensor participating in a reverse-mode graph. A Tensor is a
// shared handle to its node; copying a Tensor aliases the same storage.
// Values are validated finite at construction and after every op.
// ---------------------------------------------------------------------------
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty means "all zeros / untouched"
    std::vector<Tensor> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backprop;
    bool backward_done = false;  // set on a loss node after backward()
  };
  using NodePtr = std::shared_ptr<Node>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    if (n != data.size()) {
      throw ShapeError("tensor data length does not match shape");
    }
    check_finite(data, "tensor construction");
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->data.size(); }
  size_t rows() const { return dim2().first; }
  size_t cols() const { return dim2().second; }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (node_->grad.empty()) {
      throw Error("gradient not populated; call backward() first");
    }
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  NodePtr node() const { return node_; }

  // Detached value copy (fresh leaf, no history).
  Tensor detached_copy(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->data, requires_grad);
  }

 private:
  std::pair<size_t, size_t> dim2() const {
    const Shape& s = node_->shape;
    if (s.size() == 1) return {1, s[0]};
    if (s.size() == 2) return {s[0], s[1]};
    throw ShapeError("operation requires a 1-D or 2-D tensor");
  }

  NodePtr node_;
};

namespace detail {

// exp for softmax-style inputs (anything <= ~709). Range reduction to
// e^x = 2^k * e^r with |r| <= ln2/2 and a degree-11 Taylor tail keeps the
// relative error within a few ulp while vectorizing cleanly (no libm calls:
// rounding uses the 1.5*2^52 shifter trick).
inline double exp_fast(double x) {
  constexpr double kLog2E = 1.44269504088896340736;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
  double xc = x < -708.0 ? -708.0 : x;  // e^-708 is already ~3e-308
  xc = xc > 708.0 ? 708.0 : xc;
  double kd = (xc * kLog2E + kShifter) - kShifter;  // round to nearest
  double r = xc - kd * kLn2Hi;
  r -= kd * kLn2Lo;
  double p = 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  uint64_t bits = static_cast<uint64_t>(static_cast<int64_t>(kd) + 1023) << 52;
  double pow2k;
  std::memcpy(&pow2k, &bits, sizeof pow2k);
  return p * pow2k;
}

// Numerically stable softmax over one contiguous row.
inline void softmax_row_inplace(const double* x, double* y, size_t n) {
  double mx = x[0];
  for (size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    y[j] = exp_fast(x[j] - mx);
    sum += y[j];
  }
  double inv = 1.0 / sum;
  for (size_t j = 0; j < n; ++j) y[j] *= inv;
}

inline std::vector<double>& ensure_grad(Tensor::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

inline std::span<const double> grad_span(const Tensor& t) {
  return std::span<const double>(t.node()->grad);
}

// c(m x n) += a(m x k) . b(k x n)
inline void gemm_acc(const double* __restrict a, const double* __restrict b,
                     double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      const double* bk = b + kk * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

// c(m x n) += a(m x k) . b(n x k)^T
inline void gemm_nt_acc(const double* __restrict a, const double* __restrict b,
                        double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

// c(k x n) += a(m x k)^T . b(m x n)
inline void gemm_tn_acc(const double* __restrict a, const double* __restrict b,
                        double* __restrict c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      double* ck = c + kk * n;
      for (size_t j = 0; j < n; ++j) ck[j] += av * bi[j];
    }
  }
}

inline Tensor make_op_output(Shape shape, std::vector<double> data,
                             std::vector<Tensor> parents,
                             std::function<void(Tensor::Node&)> backprop,
                             const char* name) {
  check_finite(data, name);
  bool needs = false;
  for (const Tensor& p : parents) needs |= p.requires_grad();
  Tensor out(std::move(shape), std::move(data));
  if (needs) {
    Tensor::Node& n = *out.node();
    n.requires_grad = true;
    n.parents = std::move(parents);
    n.backprop = std::move(backprop);
  }
  return out;
}

inline void require_2d_match(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph: the operation records reachable from a root, in topological order.
// backward() consumes one; it is also exposed directly for structural tests.
// ---------------------------------------------------------------------------
struct Graph {
  std::vector<Tensor::NodePtr> topo;  // parents precede children

  static Graph trace(const Tensor& root) {
    Graph g;
    std::unordered_set<Tensor::Node*> visited;
    // Iterative post-order DFS.
    std::vector<std::pair<Tensor::NodePtr, size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Tensor::NodePtr parent = node->parents[next++].node();
        if (!visited.count(parent.get())) {
          visited.insert(parent.get());
          stack.emplace_back(parent, 0);
        }
      } else {
        g.topo.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }
};

// Reverse-mode sweep from a scalar loss. Populates .grad on every
// requires_grad tensor reachable from it. A second call on the same loss
// without rebuilding the graph is an error.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss");
  if (loss.node()->backward_done) {
    throw Error("backward() already called on this loss; rebuild the graph first");
  }
  Graph g = Graph::trace(loss);
  detail::ensure_grad(*loss.node())[0] = 1.0;
  for (auto it = g.topo.rbegin(); it != g.topo.rend(); ++it) {
    Tensor::Node& n = **it;
    if (n.backprop && !n.grad.empty()) n.backprop(n);
  }
  loss.node()->backward_done = true;
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw ShapeError("matmul: inner dimensions differ");
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto bp = [a, b, m, k, n](Tensor::Node& node) {
    const double* g = node.grad.data();
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      detail::gemm_nt_acc(g, b.data().data(), da, m, n, k);  // dA = G . B^T
    }
    if (b.requires_grad()) {
      double* db = detail::ensure_grad(*b.node()).data();
      detail::gemm_tn_acc(a.data().data(), g, db, m, k, n);  // dB = A^T . G
    }
  };
  return detail::make_op_output({m, n}, std::move(out), {a, b}, bp, "matmul");
}

// a . b^T with b given row-major (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto bp = [a, b, m, k, n](Tensor::Node& node) {
    const double* g = node.grad.data();
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      detail::gemm_acc(g, b.data().data(), da, m, n, k);  // dA = G . B
    }
    if (b.requires_grad()) {
      double* db = detail::ensure_grad(*b.node()).data();
      detail::gemm_tn_acc(g, a.data().data(), db, m, n, k);  // dB = G^T . A
    }
  };
  return detail::make_op_output({m, n}, std::move(out), {a, b}, bp, "matmul_nt");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_2d_match(a, b, "add");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto bp = [a, b](Tensor::Node& node) {
    for (const Tensor& t : {a, b}) {
      if (!t.requires_grad()) continue;
      double* dt = detail::ensure_grad(*t.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) dt[i] += node.grad[i];
    }
  };
  return detail::make_op_output(a.shape(), std::move(out), {a, b}, bp, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_2d_match(a, b, "sub");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto bp = [a, b](Tensor::Node& node) {
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i];
    }
    if (b.requires_grad()) {
      double* db = detail::ensure_grad(*b.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) db[i] -= node.grad[i];
    }
  };
  return detail::make_op_output(a.shape(), std::move(out), {a, b}, bp, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_2d_match(a, b, "mul");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto bp = [a, b](Tensor::Node& node) {
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      double* db = detail::ensure_grad(*b.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) db[i] += node.grad[i] * a.data()[i];
    }
  };
  return detail::make_op_output(a.shape(), std::move(out), {a, b}, bp, "mul");
}

inline Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto bp = [a, c](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i] * c;
  };
  return detail::make_op_output(a.shape(), std::move(out), {a}, bp, "scale");
}

// a(m x n) + v broadcast across rows. v must be 1 x n (or length n).
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  size_t m = a.rows(), n = a.cols();
  if (v.numel() != n) throw ShapeError("add_rowvec: vector length mismatch");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + v.data()[j];
  auto bp = [a, v, m, n](Tensor::Node& node) {
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i];
    }
    if (v.requires_grad()) {
      double* dv = detail::ensure_grad(*v.node()).data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) dv[j] += node.grad[i * n + j];
    }
  };
  return detail::make_op_output(a.shape(), std::move(out), {a, v}, bp, "add_rowvec");
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto bp = [a](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < node.grad.size(); ++i)
      if (a.data()[i] > 0.0) da[i] += node.grad[i];
  };
  return detail::make_op_output(a.shape(), std::move(out), {a}, bp, "relu");
}

// Row-wise softmax with per-row max subtraction. Each output row sums to 1.
inline Tensor softmax_rows(const Tensor& a) {
  check_finite(a.data(), "softmax_rows input");
  size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    detail::softmax_row_inplace(a.data().data() + i * n, out.data() + i * n, n);
  }
  // dX_row = s (.) (G_row - <G_row, s>), the action of J = diag(s) - s s^T.
  auto bp = [a, m, n](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < m; ++i) {
      const double* s = node.data.data() + i * n;
      const double* g = node.grad.data() + i * n;
      double dot = 0.0;
      for (size_t j = 0; j < n; ++j) dot += g[j] * s[j];
      for (size_t j = 0; j < n; ++j) da[i * n + j] += s[j] * (g[j] - dot);
    }
  };
  return detail::make_op_output({m, n}, std::move(out), {a}, bp, "softmax_rows");
}

// Row-wise layer norm with affine (gamma, beta length n). Population variance.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  size_t m = a.rows(), n = a.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine parameter length mismatch");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double dxj = x[j] - mean;
      var += dxj * dxj;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (size_t j = 0; j < n; ++j) {
      double h = (x[j] - mean) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  auto bp = [a, gamma, beta, m, n, xhat = std::move(xhat),
             inv_std = std::move(inv_std)](Tensor::Node& node) {
    const double* g = node.grad.data();
    if (gamma.requires_grad()) {
      double* dg = detail::ensure_grad(*gamma.node()).data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) dg[j] += g[i * n + j] * xhat[i * n + j];
    }
    if (beta.requires_grad()) {
      double* db = detail::ensure_grad(*beta.node()).data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
    }
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        const double* hi = xhat.data() + i * n;
        double mean_dh = 0.0, mean_dhh = 0.0;
        for (size_t j = 0; j < n; ++j) {
          double dh = gi[j] * gamma.data()[j];
          mean_dh += dh;
          mean_dhh += dh * hi[j];
        }
        mean_dh /= static_cast<double>(n);
        mean_dhh /= static_cast<double>(n);
        for (size_t j = 0; j < n; ++j) {
          double dh = gi[j] * gamma.data()[j];
          da[i * n + j] += inv_std[i] * (dh - mean_dh - hi[j] * mean_dhh);
        }
      }
    }
  };
  return detail::make_op_output({m, n}, std::move(out), {a, gamma, beta}, bp,
                                "layer_norm");
}

inline Tensor sum_all(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  auto bp = [a](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    double g = node.grad[0];
    for (size_t i = 0; i < a.numel(); ++i) da[i] += g;
  };
  return detail::make_op_output({1}, {s}, {a}, bp, "sum_all");
}

inline Tensor mean_all(const Tensor& a) {
  double inv = 1.0 / static_cast<double>(a.numel());
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv;
  auto bp = [a, inv](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    double g = node.grad[0] * inv;
    for (size_t i = 0; i < a.numel(); ++i) da[i] += g;
  };
  return detail::make_op_output({1}, {s}, {a}, bp, "mean_all");
}

// Mean over all elements of (a - b)^2.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor diff = sub(a, b);
  return mean_all(mul(diff, diff));
}

inline Tensor slice_cols(const Tensor& a, size_t start, size_t len) {
  size_t m = a.rows(), n = a.cols();
  if (start + len > n) throw ShapeError("slice_cols: range out of bounds");
  std::vector<double> out(m * len);
  for (size_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * len, a.data().data() + i * n + start,
                len * sizeof(double));
  auto bp = [a, start, len, m, n](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < len; ++j)
        da[i * n + start + j] += node.grad[i * len + j];
  };
  return detail::make_op_output({m, len}, std::move(out), {a}, bp, "slice_cols");
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  size_t m = parts[0].rows();
  size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<double> out(m * total);
  size_t off = 0;
  for (const Tensor& p : parts) {
    size_t w = p.cols();
    for (size_t i = 0; i < m; ++i)
      std::memcpy(out.data() + i * total + off, p.data().data() + i * w,
                  w * sizeof(double));
    off += w;
  }
  auto bp = [parts, m, total](Tensor::Node& node) {
    size_t off = 0;
    for (const Tensor& p : parts) {
      size_t w = p.cols();
      if (p.requires_grad()) {
        double* dp = detail::ensure_grad(*p.node()).data();
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < w; ++j)
            dp[i * w + j] += node.grad[i * total + off + j];
      }
      off += w;
    }
  };
  return detail::make_op_output({m, total}, std::move(out), parts, bp, "concat_cols");
}

// Rows of a at the given indices, in order. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& a, std::vector<size_t> indices) {
  size_t m = a.rows(), n = a.cols();
  for (size_t idx : indices)
    if (idx >= m) throw ShapeError("gather_rows: index out of range");
  std::vector<double> out(indices.size() * n);
  for (size_t i = 0; i < indices.size(); ++i)
    std::memcpy(out.data() + i * n, a.data().data() + indices[i] * n,
                n * sizeof(double));
  size_t k = indices.size();
  auto bp = [a, indices = std::move(indices), n](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < indices.size(); ++i)
      for (size_t j = 0; j < n; ++j)
        da[indices[i] * n + j] += node.grad[i * n + j];
  };
  return detail::make_op_output({k, n}, std::move(out), {a}, bp, "gather_rows");
}

// a with v (1 x n) added to each listed row.
inline Tensor add_to_rows(const Tensor& a, const std::vector<size_t>& indices,
                          const Tensor& v) {
  size_t m = a.rows(), n = a.cols();
  if (v.numel() != n) throw ShapeError("add_to_rows: vector length mismatch");
  for (size_t idx : indices)
    if (idx >= m) throw ShapeError("add_to_rows: index out of range");
  std::vector<double> out(a.data());
  for (size_t idx : indices)
    for (size_t j = 0; j < n; ++j) out[idx * n + j] += v.data()[j];
  auto bp = [a, v, indices, n](Tensor::Node& node) {
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i];
    }
    if (v.requires_grad()) {
      double* dv = detail::ensure_grad(*v.node()).data();
      for (size_t idx : indices)
        for (size_t j = 0; j < n; ++j) dv[j] += node.grad[idx * n + j];
    }
  };
  return detail::make_op_output({m, n}, std::move(out), {a, v}, bp, "add_to_rows");
}

// Appends tok (1 x n) as the last row of every consecutive block of
// rows_per_block rows. Output blocks have rows_per_block + 1 rows.
inline Tensor append_row_per_block(const Tensor& a, const Tensor& tok,
                                   size_t rows_per_block) {
  size_t m = a.rows(), n = a.cols();
  if (tok.numel() != n) throw ShapeError("append_row_per_block: token length mismatch");
  if (rows_per_block == 0 || m % rows_per_block != 0) {
    throw ShapeError("append_row_per_block: rows not divisible into blocks");
  }
  size_t blocks = m / rows_per_block;
  size_t out_rpb = rows_per_block + 1;
  std::vector<double> out(blocks * out_rpb * n);
  for (size_t b = 0; b < blocks; ++b) {
    std::memcpy(out.data() + b * out_rpb * n,
                a.data().data() + b * rows_per_block * n,
                rows_per_block * n * sizeof(double));
    std::memcpy(out.data() + (b * out_rpb + rows_per_block) * n, tok.data().data(),
                n * sizeof(double));
  }
  auto bp = [a, tok, rows_per_block, blocks, out_rpb, n](Tensor::Node& node) {
    if (a.requires_grad()) {
      double* da = detail::ensure_grad(*a.node()).data();
      for (size_t b = 0; b < blocks; ++b)
        for (size_t r = 0; r < rows_per_block; ++r)
          for (size_t j = 0; j < n; ++j)
            da[(b * rows_per_block + r) * n + j] +=
                node.grad[(b * out_rpb + r) * n + j];
    }
    if (tok.requires_grad()) {
      double* dt = detail::ensure_grad(*tok.node()).data();
      for (size_t b = 0; b < blocks; ++b)
        for (size_t j = 0; j < n; ++j)
          dt[j] += node.grad[(b * out_rpb + rows_per_block) * n + j];
    }
  };
  return detail::make_op_output({blocks * out_rpb, n}, std::move(out), {a, tok}, bp,
                                "append_row_per_block");
}

namespace detail {
inline size_t block_count(const Tensor& t, size_t rows_per_block, const char* op) {
  if (rows_per_block == 0 || t.rows() % rows_per_block != 0) {
    throw ShapeError(std::string(op) + ": rows not divisible into blocks");
  }
  return t.rows() / rows_per_block;
}
}  // namespace detail

// Per block i of r rows: S_i = A_i . B_i^T. Output is (blocks*r) x r.
inline Tensor block_matmul_nt(const Tensor& a, const Tensor& b, size_t r) {
  size_t k = a.cols();
  if (b.cols() != k || b.rows() != a.rows()) {
    throw ShapeError("block_matmul_nt: operand shapes differ");
  }
  size_t blocks = detail::block_count(a, r, "block_matmul_nt");
  std::vector<double> out(blocks * r * r, 0.0);
  for (size_t i = 0; i < blocks; ++i)
    detail::gemm_nt_acc(a.data().data() + i * r * k, b.data().data() + i * r * k,
                        out.data() + i * r * r, r, k, r);
  auto bp = [a, b, r, k, blocks](Tensor::Node& node) {
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * r * r;
      if (a.requires_grad()) {
        double* da = detail::ensure_grad(*a.node()).data() + i * r * k;
        detail::gemm_acc(g, b.data().data() + i * r * k, da, r, r, k);
      }
      if (b.requires_grad()) {
        double* db = detail::ensure_grad(*b.node()).data() + i * r * k;
        detail::gemm_tn_acc(g, a.data().data() + i * r * k, db, r, r, k);
      }
    }
  };
  return detail::make_op_output({blocks * r, r}, std::move(out), {a, b}, bp,
                                "block_matmul_nt");
}

// Per block i: O_i = S_i . V_i where S_i is r x r and V_i is r x k.
inline Tensor block_matmul(const Tensor& s, const Tensor& v, size_t r) {
  if (s.cols() != r) throw ShapeError("block_matmul: score blocks must be square");
  size_t blocks = detail::block_count(s, r, "block_matmul");
  size_t k = v.cols();
  if (v.rows() != blocks * r) throw ShapeError("block_matmul: value rows mismatch");
  std::vector<double> out(blocks * r * k, 0.0);
  for (size_t i = 0; i < blocks; ++i)
    detail::gemm_acc(s.data().data() + i * r * r, v.data().data() + i * r * k,
                     out.data() + i * r * k, r, r, k);
  auto bp = [s, v, r, k, blocks](Tensor::Node& node) {
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * r * k;
      if (s.requires_grad()) {
        double* ds = detail::ensure_grad(*s.node()).data() + i * r * r;
        detail::gemm_nt_acc(g, v.data().data() + i * r * k, ds, r, k, r);
      }
      if (v.requires_grad()) {
        double* dv = detail::ensure_grad(*v.node()).data() + i * r * k;
        detail::gemm_tn_acc(s.data().data() + i * r * r, g, dv, r, r, k);
      }
    }
  };
  return detail::make_op_output({blocks * r, k}, std::move(out), {s, v}, bp,
                                "block_matmul");
}

// One query row per block: out[i, j] = <q_i, K_{i*r + j}>. q is blocks x k.
inline Tensor block_query_scores(const Tensor& q, const Tensor& kmat, size_t r) {
  size_t blocks = q.rows(), k = q.cols();
  if (kmat.cols() != k || kmat.rows() != blocks * r) {
    throw ShapeError("block_query_scores: operand shapes differ");
  }
  std::vector<double> out(blocks * r);
  for (size_t i = 0; i < blocks; ++i) {
    const double* qi = q.data().data() + i * k;
    for (size_t j = 0; j < r; ++j) {
      const double* kj = kmat.data().data() + (i * r + j) * k;
      double acc = 0.0;
      for (size_t c = 0; c < k; ++c) acc += qi[c] * kj[c];
      out[i * r + j] = acc;
    }
  }
  auto bp = [q, kmat, r, k, blocks](Tensor::Node& node) {
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * r;
      if (q.requires_grad()) {
        double* dq = detail::ensure_grad(*q.node()).data() + i * k;
        for (size_t j = 0; j < r; ++j) {
          const double* kj = kmat.data().data() + (i * r + j) * k;
          for (size_t c = 0; c < k; ++c) dq[c] += g[j] * kj[c];
        }
      }
      if (kmat.requires_grad()) {
        double* dk = detail::ensure_grad(*kmat.node()).data();
        const double* qi = q.data().data() + i * k;
        for (size_t j = 0; j < r; ++j)
          for (size_t c = 0; c < k; ++c)
            dk[(i * r + j) * k + c] += g[j] * qi[c];
      }
    }
  };
  return detail::make_op_output({blocks, r}, std::move(out), {q, kmat}, bp,
                                "block_query_scores");
}

// out_i = sum_j w[i, j] * V_{i*r + j}. w is blocks x r, v is (blocks*r) x k.
inline Tensor block_weighted_sum(const Tensor& w, const Tensor& v, size_t r) {
  size_t blocks = w.rows(), k = v.cols();
  if (w.cols() != r || v.rows() != blocks * r) {
    throw ShapeError("block_weighted_sum: operand shapes differ");
  }
  std::vector<double> out(blocks * k, 0.0);
  for (size_t i = 0; i < blocks; ++i) {
    double* oi = out.data() + i * k;
    for (size_t j = 0; j < r; ++j) {
      double wij = w.data()[i * r + j];
      const double* vj = v.data().data() + (i * r + j) * k;
      for (size_t c = 0; c < k; ++c) oi[c] += wij * vj[c];
    }
  }
  auto bp = [w, v, r, k, blocks](Tensor::Node& node) {
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * k;
      if (w.requires_grad()) {
        double* dw = detail::ensure_grad(*w.node()).data() + i * r;
        for (size_t j = 0; j < r; ++j) {
          const double* vj = v.data().data() + (i * r + j) * k;
          double acc = 0.0;
          for (size_t c = 0; c < k; ++c) acc += g[c] * vj[c];
          dw[j] += acc;
        }
      }
      if (v.requires_grad()) {
        double* dv = detail::ensure_grad(*v.node()).data();
        for (size_t j = 0; j < r; ++j) {
          double wij = w.data()[i * r + j];
          for (size_t c = 0; c < k; ++c) dv[(i * r + j) * k + c] += wij * g[c];
        }
      }
    }
  };
  return detail::make_op_output({blocks, k}, std::move(out), {w, v}, bp,
                                "block_weighted_sum");
}

// Column mean within each block of r rows.
inline Tensor block_colmean(const Tensor& a, size_t r) {
  size_t blocks = detail::block_count(a, r, "block_colmean");
  size_t n = a.cols();
  double inv = 1.0 / static_cast<double>(r);
  std::vector<double> out(blocks * n, 0.0);
  for (size_t i = 0; i < blocks; ++i) {
    double* oi = out.data() + i * n;
    for (size_t j = 0; j < r; ++j) {
      const double* row = a.data().data() + (i * r + j) * n;
      for (size_t c = 0; c < n; ++c) oi[c] += row[c];
    }
    for (size_t c = 0; c < n; ++c) oi[c] *= inv;
  }
  auto bp = [a, r, n, blocks, inv](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * n;
      for (size_t j = 0; j < r; ++j)
        for (size_t c = 0; c < n; ++c)
          da[(i * r + j) * n + c] += g[c] * inv;
    }
  };
  return detail::make_op_output({blocks, n}, std::move(out), {a}, bp, "block_colmean");
}

// Column max within each block of r rows. Ties split gradient 1/m.
inline Tensor block_colmax(const Tensor& a, size_t r) {
  size_t blocks = detail::block_count(a, r, "block_colmax");
  size_t n = a.cols();
  std::vector<double> out(blocks * n);
  for (size_t i = 0; i < blocks; ++i) {
    double* oi = out.data() + i * n;
    const double* base = a.data().data() + i * r * n;
    for (size_t c = 0; c < n; ++c) oi[c] = base[c];
    for (size_t j = 1; j < r; ++j) {
      const double* row = base + j * n;
      for (size_t c = 0; c < n; ++c) oi[c] = std::max(oi[c], row[c]);
    }
  }
  auto bp = [a, r, n, blocks](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < blocks; ++i) {
      const double* g = node.grad.data() + i * n;
      const double* mx = node.data.data() + i * n;
      const double* base = a.data().data() + i * r * n;
      for (size_t c = 0; c < n; ++c) {
        size_t m = 0;
        for (size_t j = 0; j < r; ++j)
          if (base[j * n + c] == mx[c]) ++m;
        double share = g[c] / static_cast<double>(m);
        for (size_t j = 0; j < r; ++j)
          if (base[j * n + c] == mx[c]) da[(i * r + j) * n + c] += share;
      }
    }
  };
  return detail::make_op_output({blocks, n}, std::move(out), {a}, bp, "block_colmax");
}

// Fused multi-head attention within blocks of rows_per_block rows: for each
// block and head, P = softmax(scale * Qh Kh^T) and out_h = P Vh, with head
// slices taken as contiguous column ranges. One op instead of a per-head
// slice/matmul/softmax/matmul chain; the saved probabilities drive backward.
inline Tensor multihead_self_attention(const Tensor& q, const Tensor& k,
                                       const Tensor& v, size_t heads,
                                       size_t rows_per_block, double scale) {
  size_t m = q.rows(), d = q.cols();
  if (k.rows() != m || k.cols() != d || v.rows() != m || v.cols() != d) {
    throw ShapeError("multihead_self_attention: operand shapes differ");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("multihead_self_attention: heads must divide width");
  }
  size_t blocks = detail::block_count(q, rows_per_block, "multihead_self_attention");
  size_t r = rows_per_block;
  size_t hd = d / heads;
  auto probs = std::make_shared<std::vector<double>>(blocks * heads * r * r);
  std::vector<double> out(m * d, 0.0);
  // Per-(block, head) K/V transposed into hd x r scratch so the inner loops
  // run r-wide over contiguous memory.
  std::vector<double> kt(hd * r), vt(hd * r);
  for (size_t b = 0; b < blocks; ++b) {
    const double* qb = q.data().data() + b * r * d;
    const double* kb = k.data().data() + b * r * d;
    const double* vb = v.data().data() + b * r * d;
    double* ob = out.data() + b * r * d;
    for (size_t h = 0; h < heads; ++h) {
      size_t off = h * hd;
      for (size_t c = 0; c < hd; ++c) {
        for (size_t j = 0; j < r; ++j) {
          kt[c * r + j] = kb[j * d + off + c];
          vt[c * r + j] = vb[j * d + off + c];
        }
      }
      double* pb = probs->data() + (b * heads + h) * r * r;
      for (size_t i = 0; i < r; ++i) {
        const double* qi = qb + i * d + off;
        double* si = pb + i * r;
        double q0 = qi[0] * scale;
        const double* k0 = kt.data();
        for (size_t j = 0; j < r; ++j) si[j] = q0 * k0[j];
        for (size_t c = 1; c < hd; ++c) {
          double qc = qi[c] * scale;
          const double* kc = kt.data() + c * r;
          for (size_t j = 0; j < r; ++j) si[j] += qc * kc[j];
        }
      }
      // Softmax in place over each stored score row.
      for (size_t i = 0; i < r; ++i) {
        double* si = pb + i * r;
        double mx = si[0];
        for (size_t j = 1; j < r; ++j) mx = std::max(mx, si[j]);
        for (size_t j = 0; j < r; ++j) si[j] = detail::exp_fast(si[j] - mx);
        double sum = 0.0;
        for (size_t j = 0; j < r; ++j) sum += si[j];
        double inv = 1.0 / sum;
        for (size_t j = 0; j < r; ++j) si[j] *= inv;
      }
      for (size_t i = 0; i < r; ++i) {
        const double* pi = pb + i * r;
        double* oi = ob + i * d + off;
        for (size_t c = 0; c < hd; ++c) {
          const double* vc = vt.data() + c * r;
          double acc = 0.0;
          for (size_t j = 0; j < r; ++j) acc += pi[j] * vc[j];
          oi[c] = acc;
        }
      }
    }
  }
  auto bp = [q, k, v, heads, r, hd, d, blocks, scale, probs](Tensor::Node& node) {
    bool need_q = q.requires_grad(), need_k = k.requires_grad(),
         need_v = v.requires_grad();
    double* dq = need_q ? detail::ensure_grad(*q.node()).data() : nullptr;
    double* dk = need_k ? detail::ensure_grad(*k.node()).data() : nullptr;
    double* dv = need_v ? detail::ensure_grad(*v.node()).data() : nullptr;
    std::vector<double> kt(hd * r), vt(hd * r);
    std::vector<double> dkt(hd * r), dvt(hd * r);
    std::vector<double> dp(r), ds(r);
    for (size_t b = 0; b < blocks; ++b) {
      const double* g = node.grad.data() + b * r * d;
      const double* qb = q.data().data() + b * r * d;
      const double* kb = k.data().data() + b * r * d;
      const double* vb = v.data().data() + b * r * d;
      for (size_t h = 0; h < heads; ++h) {
        size_t off = h * hd;
        for (size_t c = 0; c < hd; ++c) {
          for (size_t j = 0; j < r; ++j) {
            kt[c * r + j] = kb[j * d + off + c];
            vt[c * r + j] = vb[j * d + off + c];
          }
        }
        std::fill(dkt.begin(), dkt.end(), 0.0);
        std::fill(dvt.begin(), dvt.end(), 0.0);
        const double* pb = probs->data() + (b * heads + h) * r * r;
        for (size_t i = 0; i < r; ++i) {
          const double* gi = g + i * d + off;
          const double* pi = pb + i * r;
          const double* qi = qb + i * d + off;
          // dP_i = dO_i . V^T ; dS_i = P_i (.) (dP_i - <dP_i, P_i>)
          {
            double g0 = gi[0];
            const double* v0 = vt.data();
            for (size_t j = 0; j < r; ++j) dp[j] = g0 * v0[j];
          }
          for (size_t c = 1; c < hd; ++c) {
            double gc = gi[c];
            const double* vc = vt.data() + c * r;
            for (size_t j = 0; j < r; ++j) dp[j] += gc * vc[j];
          }
          double dot = 0.0;
          for (size_t j = 0; j < r; ++j) dot += dp[j] * pi[j];
          for (size_t j = 0; j < r; ++j) ds[j] = pi[j] * (dp[j] - dot) * scale;
          if (need_q) {
            double* dqi = dq + (b * r + i) * d + off;
            for (size_t c = 0; c < hd; ++c) {
              const double* kc = kt.data() + c * r;
              double acc = 0.0;
              for (size_t j = 0; j < r; ++j) acc += ds[j] * kc[j];
              dqi[c] += acc;
            }
          }
          if (need_k) {
            for (size_t c = 0; c < hd; ++c) {
              double qc = qi[c];
              double* dkc = dkt.data() + c * r;
              for (size_t j = 0; j < r; ++j) dkc[j] += ds[j] * qc;
            }
          }
          if (need_v) {
            for (size_t c = 0; c < hd; ++c) {
              double gc = gi[c];
              double* dvc = dvt.data() + c * r;
              for (size_t j = 0; j < r; ++j) dvc[j] += pi[j] * gc;
            }
          }
        }
        if (need_k) {
          for (size_t c = 0; c < hd; ++c)
            for (size_t j = 0; j < r; ++j)
              dk[(b * r + j) * d + off + c] += dkt[c * r + j];
        }
        if (need_v) {
          for (size_t c = 0; c < hd; ++c)
            for (size_t j = 0; j < r; ++j)
              dv[(b * r + j) * d + off + c] += dvt[c * r + j];
        }
      }
    }
  };
  return detail::make_op_output({m, d}, std::move(out), {q, k, v}, bp,
                                "multihead_self_attention");
}

// Fused single-query attention: one query row per block attends over its
// block. q is blocks x d; k and v are (blocks*rows_per_block) x d. Output is
// blocks x d with per-head softmax weights over the block rows.
inline Tensor single_query_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v, size_t heads,
                                     size_t rows_per_block, double scale) {
  size_t blocks = q.rows(), d = q.cols();
  size_t r = rows_per_block;
  if (k.cols() != d || v.cols() != d || k.rows() != blocks * r ||
      v.rows() != blocks * r) {
    throw ShapeError("single_query_attention: operand shapes differ");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("single_query_attention: heads must divide width");
  }
  size_t hd = d / heads;
  auto probs = std::make_shared<std::vector<double>>(blocks * heads * r);
  std::vector<double> out(blocks * d, 0.0);
  std::vector<double> scores(r);
  for (size_t b = 0; b < blocks; ++b) {
    const double* qb = q.data().data() + b * d;
    const double* kb = k.data().data() + b * r * d;
    const double* vb = v.data().data() + b * r * d;
    double* ob = out.data() + b * d;
    for (size_t h = 0; h < heads; ++h) {
      size_t off = h * hd;
      for (size_t j = 0; j < r; ++j) {
        const double* kj = kb + j * d + off;
        double acc = 0.0;
        for (size_t c = 0; c < hd; ++c) acc += qb[off + c] * kj[c];
        scores[j] = acc * scale;
      }
      double* pb = probs->data() + (b * heads + h) * r;
      detail::softmax_row_inplace(scores.data(), pb, r);
      for (size_t j = 0; j < r; ++j) {
        double w = pb[j];
        const double* vj = vb + j * d + off;
        for (size_t c = 0; c < hd; ++c) ob[off + c] += w * vj[c];
      }
    }
  }
  auto bp = [q, k, v, heads, r, hd, d, blocks, scale, probs](Tensor::Node& node) {
    bool need_q = q.requires_grad(), need_k = k.requires_grad(),
         need_v = v.requires_grad();
    double* dq = need_q ? detail::ensure_grad(*q.node()).data() : nullptr;
    double* dk = need_k ? detail::ensure_grad(*k.node()).data() : nullptr;
    double* dv = need_v ? detail::ensure_grad(*v.node()).data() : nullptr;
    std::vector<double> dp(r);
    for (size_t b = 0; b < blocks; ++b) {
      const double* g = node.grad.data() + b * d;
      const double* qb = q.data().data() + b * d;
      const double* kb = k.data().data() + b * r * d;
      const double* vb = v.data().data() + b * r * d;
      for (size_t h = 0; h < heads; ++h) {
        size_t off = h * hd;
        const double* pb = probs->data() + (b * heads + h) * r;
        double dot = 0.0;
        for (size_t j = 0; j < r; ++j) {
          const double* vj = vb + j * d + off;
          double acc = 0.0;
          for (size_t c = 0; c < hd; ++c) acc += g[off + c] * vj[c];
          dp[j] = acc;
          dot += acc * pb[j];
        }
        for (size_t j = 0; j < r; ++j) {
          double ds = pb[j] * (dp[j] - dot) * scale;
          if (need_q) {
            const double* kj = kb + j * d + off;
            for (size_t c = 0; c < hd; ++c) dq[b * d + off + c] += ds * kj[c];
          }
          if (need_k) {
            double* dkj = dk + (b * r + j) * d + off;
            for (size_t c = 0; c < hd; ++c) dkj[c] += ds * qb[off + c];
          }
          if (need_v) {
            double* dvj = dv + (b * r + j) * d + off;
            for (size_t c = 0; c < hd; ++c) dvj[c] += pb[j] * g[off + c];
          }
        }
      }
    }
  };
  return detail::make_op_output({blocks, d}, std::move(out), {q, k, v}, bp,
                                "single_query_attention");
}

// Inverted dropout with a deterministic keyed mask. Identity when rate == 0.
inline Tensor dropout(const Tensor& a, double rate, uint64_t key) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  CounterRng rng(key);
  double keep = 1.0 - rate;
  double inv_keep = 1.0 / keep;
  std::vector<double> mask(a.numel());
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.next_double() < keep ? inv_keep : 0.0;
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * mask[i];
  auto bp = [a, mask = std::move(mask)](Tensor::Node& node) {
    if (!a.requires_grad()) return;
    double* da = detail::ensure_grad(*a.node()).data();
    for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i] * mask[i];
  };
  return detail::make_op_output(a.shape(), std::move(out), {a}, bp, "dropout");
}

}  // namespace poolbench
