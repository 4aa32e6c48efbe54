#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poolbench/common.hpp"
#include "poolbench/pooling.hpp"
#include "poolbench/rng.hpp"
#include "poolbench/tensor.hpp"
#include "poolbench/vector_set.hpp"

namespace poolbench {

enum class PoolMethod : uint8_t { kAvg = 0, kMax = 1, kCls = 2, kAda = 3 };

inline const char* pool_method_name(PoolMethod m) {
  switch (m) {
    case PoolMethod::kAvg: return "avg";
    case PoolMethod::kMax: return "max";
    case PoolMethod::kCls: return "cls";
    case PoolMethod::kAda: return "ada";
  }
  return "?";
}

inline PoolMethod pool_method_from_name(const std::string& s) {
  if (s == "avg") return PoolMethod::kAvg;
  if (s == "max") return PoolMethod::kMax;
  if (s == "cls") return PoolMethod::kCls;
  if (s == "ada") return PoolMethod::kAda;
  throw ConfigError("unknown pool method: " + s);
}

struct EncoderConfig {
  size_t num_layers = 12;
  size_t num_heads = 8;
  size_t dim_input = 16;
  size_t dim_hidden = 16;
  size_t dim_ff = 64;
  double dropout_ff = 0.1;
  double dropout_attn = 0.0;
  bool bias_attn = false;
  bool bias_ff = true;
  PoolMethod pool_method = PoolMethod::kAvg;
  size_t adapool_heads = 1;
  uint64_t seed = 0;

  size_t dim_output() const { return dim_input; }

  void validate() const {
    if (dim_input == 0 || dim_hidden == 0 || dim_ff == 0) {
      throw ConfigError("encoder: dimensions must be positive");
    }
    if (num_heads == 0 || dim_hidden % num_heads != 0) {
      throw ConfigError("encoder: num_heads must divide dim_hidden");
    }
    if (adapool_heads == 0 || dim_hidden % adapool_heads != 0) {
      throw ConfigError("encoder: adapool_heads must divide dim_hidden");
    }
    if (dropout_ff < 0.0 || dropout_ff >= 1.0 || dropout_attn < 0.0 ||
        dropout_attn >= 1.0) {
      throw ConfigError("encoder: dropout must be in [0, 1)");
    }
  }
};

enum class RunMode { kTrain, kEval };

inline uint64_t hash_name(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// All learned parameters, addressable by name. Initialization draws each
// parameter from a stream keyed by (seed, name), so models that share a
// parameter name share its initial values bit-exactly regardless of which
// pooling head they carry.
struct ModelState {
  EncoderConfig cfg;
  std::vector<std::string> names;  // creation order
  std::vector<Tensor> params;
  std::map<std::string, size_t> index;

  const Tensor& param(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return params[it->second];
  }
  Tensor& param(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("unknown parameter: " + name);
    return params[it->second];
  }

  enum class Init { kNormal002, kZeros, kOnes };

  void add(const std::string& name, Shape shape, Init init) {
    size_t numel = shape_numel(shape);
    std::vector<double> data(numel);
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        std::fill(data.begin(), data.end(), 1.0);
        break;
      case Init::kNormal002: {
        CounterRng rng(stream_key({cfg.seed, hash_name(name)}));
        for (double& v : data) v = rng.normal(0.0, 0.02);
        break;
      }
    }
    index[name] = params.size();
    names.push_back(name);
    params.emplace_back(std::move(shape), std::move(data), /*requires_grad=*/true);
  }

  static ModelState init(const EncoderConfig& cfg) {
    cfg.validate();
    ModelState st;
    st.cfg = cfg;
    size_t dh = cfg.dim_hidden;
    st.add("proj.w", {cfg.dim_input, dh}, Init::kNormal002);
    st.add("proj.b", {1, dh}, Init::kZeros);
    st.add("indicator", {1, dh}, Init::kNormal002);
    if (cfg.pool_method == PoolMethod::kCls) {
      st.add("cls_token", {1, dh}, Init::kNormal002);
    }
    for (size_t l = 0; l < cfg.num_layers; ++l) {
      std::string p = "layers." + std::to_string(l) + ".";
      st.add(p + "ln1.gamma", {1, dh}, Init::kOnes);
      st.add(p + "ln1.beta", {1, dh}, Init::kZeros);
      st.add(p + "attn.wq", {dh, dh}, Init::kNormal002);
      st.add(p + "attn.wk", {dh, dh}, Init::kNormal002);
      st.add(p + "attn.wv", {dh, dh}, Init::kNormal002);
      st.add(p + "attn.wo", {dh, dh}, Init::kNormal002);
      if (cfg.bias_attn) {
        st.add(p + "attn.bq", {1, dh}, Init::kZeros);
        st.add(p + "attn.bk", {1, dh}, Init::kZeros);
        st.add(p + "attn.bv", {1, dh}, Init::kZeros);
        st.add(p + "attn.bo", {1, dh}, Init::kZeros);
      }
      st.add(p + "ln2.gamma", {1, dh}, Init::kOnes);
      st.add(p + "ln2.beta", {1, dh}, Init::kZeros);
      st.add(p + "ff.w1", {dh, cfg.dim_ff}, Init::kNormal002);
      if (cfg.bias_ff) st.add(p + "ff.b1", {1, cfg.dim_ff}, Init::kZeros);
      st.add(p + "ff.w2", {cfg.dim_ff, dh}, Init::kNormal002);
      if (cfg.bias_ff) st.add(p + "ff.b2", {1, dh}, Init::kZeros);
    }
    if (cfg.pool_method == PoolMethod::kAda) {
      st.add("pool.wq", {dh, dh}, Init::kNormal002);
      st.add("pool.wk", {dh, dh}, Init::kNormal002);
      st.add("pool.wv", {dh, dh}, Init::kNormal002);
    }
    st.add("head.w", {dh, cfg.dim_output()}, Init::kNormal002);
    st.add("head.b", {1, cfg.dim_output()}, Init::kZeros);
    return st;
  }

  // Deep copy of parameter values (fresh leaves, gradients dropped).
  ModelState clone() const {
    ModelState st;
    st.cfg = cfg;
    st.names = names;
    st.index = index;
    st.params.reserve(params.size());
    for (const Tensor& p : params) st.params.push_back(p.detached_copy(true));
    return st;
  }
};

namespace detail {

struct DropKey {
  uint64_t base;
  uint64_t counter = 0;
  uint64_t next() { return stream_key({base, counter++}); }
};

inline Tensor attention_sublayer(const ModelState& st, const Tensor& h,
                                 const std::string& prefix, size_t rows_per_block,
                                 RunMode mode, DropKey& dk) {
  const EncoderConfig& cfg = st.cfg;
  size_t hd = cfg.dim_hidden / cfg.num_heads;
  double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor q = matmul(h, st.param(prefix + "attn.wq"));
  Tensor k = matmul(h, st.param(prefix + "attn.wk"));
  Tensor v = matmul(h, st.param(prefix + "attn.wv"));
  if (cfg.bias_attn) {
    q = add_rowvec(q, st.param(prefix + "attn.bq"));
    k = add_rowvec(k, st.param(prefix + "attn.bk"));
    v = add_rowvec(v, st.param(prefix + "attn.bv"));
  }
  Tensor mixed;
  if (mode == RunMode::kTrain && cfg.dropout_attn > 0.0) {
    // Unfused path so dropout can act on the attention probabilities.
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (size_t i = 0; i < cfg.num_heads; ++i) {
      Tensor qh = slice_cols(q, i * hd, hd);
      Tensor kh = slice_cols(k, i * hd, hd);
      Tensor vh = slice_cols(v, i * hd, hd);
      Tensor scores = scale(block_matmul_nt(qh, kh, rows_per_block), scl);
      Tensor probs = dropout(softmax_rows(scores), cfg.dropout_attn, dk.next());
      heads.push_back(block_matmul(probs, vh, rows_per_block));
    }
    mixed = concat_cols(heads);
  } else {
    mixed = multihead_self_attention(q, k, v, cfg.num_heads, rows_per_block, scl);
  }
  Tensor out = matmul(mixed, st.param(prefix + "attn.wo"));
  if (cfg.bias_attn) out = add_rowvec(out, st.param(prefix + "attn.bo"));
  return out;
}

inline Tensor feedforward_sublayer(const ModelState& st, const Tensor& h,
                                   const std::string& prefix, RunMode mode,
                                   DropKey& dk) {
  const EncoderConfig& cfg = st.cfg;
  Tensor f = matmul(h, st.param(prefix + "ff.w1"));
  if (cfg.bias_ff) f = add_rowvec(f, st.param(prefix + "ff.b1"));
  f = relu(f);
  f = matmul(f, st.param(prefix + "ff.w2"));
  if (cfg.bias_ff) f = add_rowvec(f, st.param(prefix + "ff.b2"));
  if (mode == RunMode::kTrain && cfg.dropout_ff > 0.0) {
    f = dropout(f, cfg.dropout_ff, dk.next());
  }
  return f;
}

}  // namespace detail

// Embeds a batch of samples laid out as (batch*n) x dim_input. targets gives
// each sample's target row (within its block); the learned indicator is
// added to that row after projection. In cls mode the class token is
// appended as the last row of every block before the first layer, making
// rows_per_block n + 1. Pre-norm residual blocks throughout.
inline Tensor encode_batch(const ModelState& st, const Tensor& inputs,
                           const std::vector<size_t>& targets, size_t batch,
                           size_t n, RunMode mode, uint64_t drop_seed,
                           size_t* rows_per_block_out = nullptr) {
  const EncoderConfig& cfg = st.cfg;
  if (inputs.rows() != batch * n || inputs.cols() != cfg.dim_input) {
    throw ConfigError("encode: input shape does not match config");
  }
  if (targets.size() != batch) throw ConfigError("encode: one target per sample");
  for (size_t t : targets)
    if (t >= n) throw ConfigError("encode: target row out of range");

  detail::DropKey dk{drop_seed};
  Tensor h = add_rowvec(matmul(inputs, st.param("proj.w")), st.param("proj.b"));
  std::vector<size_t> target_rows(batch);
  for (size_t i = 0; i < batch; ++i) target_rows[i] = i * n + targets[i];
  h = add_to_rows(h, target_rows, st.param("indicator"));

  size_t rpb = n;
  if (cfg.pool_method == PoolMethod::kCls) {
    h = append_row_per_block(h, st.param("cls_token"), n);
    rpb = n + 1;
  }
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    Tensor normed = layer_norm(h, st.param(p + "ln1.gamma"), st.param(p + "ln1.beta"));
    h = add(h, detail::attention_sublayer(st, normed, p, rpb, mode, dk));
    Tensor normed2 = layer_norm(h, st.param(p + "ln2.gamma"), st.param(p + "ln2.beta"));
    h = add(h, detail::feedforward_sublayer(st, normed2, p, mode, dk));
  }
  if (rows_per_block_out) *rows_per_block_out = rpb;
  return h;
}

// Reduces each block of embeddings to one vector. avg/max pool columns;
// cls takes the class-token row; ada cross-attends with the target-token
// embedding as query and adds the query back (residual).
inline Tensor pool_head_batch(const ModelState& st, const Tensor& embeddings,
                              const std::vector<size_t>& targets, size_t batch,
                              size_t rows_per_block) {
  const EncoderConfig& cfg = st.cfg;
  size_t rpb = rows_per_block;
  if (embeddings.rows() != batch * rpb) {
    throw ConfigError("pool_head: embedding rows do not match batch layout");
  }
  switch (cfg.pool_method) {
    case PoolMethod::kAvg:
      return block_colmean(embeddings, rpb);
    case PoolMethod::kMax:
      return block_colmax(embeddings, rpb);
    case PoolMethod::kCls: {
      std::vector<size_t> cls_rows(batch);
      for (size_t i = 0; i < batch; ++i) cls_rows[i] = i * rpb + (rpb - 1);
      return gather_rows(embeddings, cls_rows);
    }
    case PoolMethod::kAda: {
      std::vector<size_t> qrows(batch);
      for (size_t i = 0; i < batch; ++i) {
        if (targets[i] >= rpb) throw ConfigError("pool_head: bad query index");
        qrows[i] = i * rpb + targets[i];
      }
      Tensor q = gather_rows(embeddings, qrows);
      Tensor qp = matmul(q, st.param("pool.wq"));
      Tensor kp = matmul(embeddings, st.param("pool.wk"));
      Tensor vp = matmul(embeddings, st.param("pool.wv"));
      size_t hd = cfg.dim_hidden / cfg.adapool_heads;
      double scl = 1.0 / std::sqrt(static_cast<double>(hd));
      Tensor pooled =
          single_query_attention(qp, kp, vp, cfg.adapool_heads, rpb, scl);
      return add(pooled, q);
    }
  }
  throw ConfigError("pool_head: unknown pool method");
}

// Full model: encode, pool, linear head. Output is batch x dim_input.
inline Tensor forward_batch(const ModelState& st, const Tensor& inputs,
                            const std::vector<size_t>& targets, size_t batch,
                            size_t n, RunMode mode, uint64_t drop_seed = 0) {
  size_t rpb = n;
  Tensor emb = encode_batch(st, inputs, targets, batch, n, mode, drop_seed, &rpb);
  Tensor pooled = pool_head_batch(st, emb, targets, batch, rpb);
  return add_rowvec(matmul(pooled, st.param("head.w")), st.param("head.b"));
}

// Single-sample conveniences.
inline Tensor encode(const ModelState& st, const VectorSet& x, size_t target_index,
                     RunMode mode = RunMode::kEval, uint64_t drop_seed = 0) {
  Tensor inputs({x.n, x.d}, x.data);
  return encode_batch(st, inputs, {target_index}, 1, x.n, mode, drop_seed);
}

inline Tensor forward(const ModelState& st, const VectorSet& x, size_t target_index,
                      RunMode mode = RunMode::kEval, uint64_t drop_seed = 0) {
  Tensor inputs({x.n, x.d}, x.data);
  return forward_batch(st, inputs, {target_index}, 1, x.n, mode, drop_seed);
}

}  // namespace poolbench
