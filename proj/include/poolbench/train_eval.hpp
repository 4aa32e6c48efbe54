#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolbench/adam.hpp"
#include "poolbench/checkpoint.hpp"
#include "poolbench/dataset.hpp"
#include "poolbench/encoder.hpp"
#include "poolbench/parallel.hpp"
#include "poolbench/tasks.hpp"

namespace poolbench {

struct TrainConfig {
  size_t epochs = 100;
  size_t batch_size = 750;
  double lr = 5.0e-4;
  size_t folds = 5;
  double holdout_fraction = 0.1;
  uint64_t seed = 0;
  EncoderConfig encoder;

  void validate() const {
    if (folds < 2) throw ConfigError("train: folds must be >= 2");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    // lr == 0 is allowed: it turns training into a no-op, which the tests
    // use to pin down the optimizer wiring.
    if (lr < 0.0) throw ConfigError("train: lr must be non-negative");
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0)) {
      throw ConfigError("train: holdout_fraction must be in (0, 1)");
    }
    encoder.validate();
  }
};

// Deterministic split: a keyed shuffle of [0, count) assigns the first
// chunk to the holdout and partitions the rest into `folds` near-equal
// validation chunks.
struct DataSplit {
  std::vector<size_t> holdout;
  std::vector<std::vector<size_t>> fold_val;  // folds entries

  std::vector<size_t> fold_train(size_t fold) const {
    std::vector<size_t> idx;
    for (size_t f = 0; f < fold_val.size(); ++f) {
      if (f == fold) continue;
      idx.insert(idx.end(), fold_val[f].begin(), fold_val[f].end());
    }
    return idx;
  }

  static DataSplit make(size_t count, size_t folds, double holdout_fraction,
                        uint64_t seed) {
    if (count < folds + 1) throw DomainError("split: dataset too small for folds");
    std::vector<size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(stream_key({seed, 0x5917ULL}));
    rng.shuffle(order.data(), order.size());
    size_t holdout_count = static_cast<size_t>(
        std::llround(holdout_fraction * static_cast<double>(count)));
    holdout_count = std::clamp<size_t>(holdout_count, 1, count - folds);
    DataSplit sp;
    sp.holdout.assign(order.begin(), order.begin() + holdout_count);
    size_t pool = count - holdout_count;
    sp.fold_val.resize(folds);
    size_t base = pool / folds, extra = pool % folds;
    size_t cursor = holdout_count;
    for (size_t f = 0; f < folds; ++f) {
      size_t len = base + (f < extra ? 1 : 0);
      sp.fold_val[f].assign(order.begin() + cursor, order.begin() + cursor + len);
      cursor += len;
    }
    return sp;
  }
};

namespace detail {

inline void assemble_batch(const Dataset& ds, std::span<const size_t> idx,
                           std::vector<double>& xbuf, std::vector<double>& ybuf,
                           std::vector<size_t>& targets) {
  size_t n = ds.n(), d = ds.d();
  xbuf.resize(idx.size() * n * d);
  ybuf.resize(idx.size() * d);
  targets.resize(idx.size());
  for (size_t b = 0; b < idx.size(); ++b) {
    auto s = ds.sample(idx[b]);
    std::copy(s.begin(), s.end(), xbuf.begin() + b * n * d);
    const SampleLabel& lab = ds.labels[idx[b]];
    std::copy(lab.y.begin(), lab.y.end(), ybuf.begin() + b * d);
    targets[b] = lab.target_index;
  }
}

}  // namespace detail

// Mean per-element MSE between model predictions and label targets over the
// given sample indices. Eval mode: no dropout.
inline double evaluate(const ModelState& st, const Dataset& ds,
                       std::span<const size_t> indices, size_t eval_batch = 256) {
  if (ds.labels.size() != ds.count()) throw DomainError("evaluate: dataset unlabeled");
  size_t n = ds.n(), d = ds.d();
  std::vector<double> xbuf, ybuf;
  std::vector<size_t> targets;
  double total = 0.0;
  for (size_t start = 0; start < indices.size(); start += eval_batch) {
    size_t len = std::min(eval_batch, indices.size() - start);
    detail::assemble_batch(ds, indices.subspan(start, len), xbuf, ybuf, targets);
    Tensor inputs({len * n, d}, xbuf);
    Tensor pred = forward_batch(st, inputs, targets, len, n, RunMode::kEval);
    for (size_t b = 0; b < len; ++b) {
      total += prediction_loss(
          std::span<const double>(pred.data()).subspan(b * d, d),
          std::span<const double>(ybuf).subspan(b * d, d));
    }
  }
  return total / static_cast<double>(indices.size());
}

struct FoldResult {
  ModelState best_state;
  double best_val_loss = 0.0;
  size_t best_epoch = 0;
  std::vector<double> val_history;
};

// Trains one fold and keeps the checkpoint with the lowest validation loss.
// Everything (init, shuffles, dropout) is keyed by (config seed, fold), so a
// rerun reproduces the result bit-for-bit.
inline FoldResult train_fold(const Dataset& ds, std::span<const size_t> train_idx,
                             std::span<const size_t> val_idx, const TrainConfig& cfg,
                             size_t fold) {
  cfg.validate();
  if (ds.labels.size() != ds.count()) throw DomainError("train: dataset unlabeled");
  size_t n = ds.n(), d = ds.d();
  if (d != cfg.encoder.dim_input) {
    throw ConfigError("train: encoder dim_input must match the dataset");
  }

  EncoderConfig enc = cfg.encoder;
  // Fold-specific initialization stream; identical across pooling methods.
  enc.seed = stream_key({cfg.encoder.seed, 0xF01DULL, fold});
  ModelState st = ModelState::init(enc);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  AdamState opt = AdamState::init(st.params, adam_cfg);

  FoldResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<size_t> order(train_idx.begin(), train_idx.end());
  std::vector<double> xbuf, ybuf;
  std::vector<size_t> targets;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng shuffle_rng(stream_key({cfg.seed, fold, epoch, 0x51ULL}));
    shuffle_rng.shuffle(order.data(), order.size());
    size_t batch_counter = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t len = std::min(cfg.batch_size, order.size() - start);
      detail::assemble_batch(
          ds, std::span<const size_t>(order).subspan(start, len), xbuf, ybuf,
          targets);
      Tensor inputs({len * n, d}, xbuf);
      Tensor y({len, d}, ybuf);
      uint64_t drop_key = stream_key({cfg.seed, fold, epoch, batch_counter++});
      Tensor pred = forward_batch(st, inputs, targets, len, n, RunMode::kTrain,
                                  drop_key);
      Tensor loss = mse(pred, y);
      backward(loss);
      adam_step(st.params, opt);
    }
    double val = evaluate(st, ds, val_idx);
    result.val_history.push_back(val);
    if (val < result.best_val_loss) {
      result.best_val_loss = val;
      result.best_epoch = epoch;
      result.best_state = st.clone();
    }
  }
  if (!result.best_state.params.empty()) return result;
  result.best_state = st.clone();  // epochs == 0
  return result;
}

struct EvalRow {
  std::string method;
  size_t k = 0;
  double snr = 0.0;
  double mean_loss = 0.0;
  double std_loss = 0.0;
  double baseline_centroid = 0.0;
  double baseline_target = 0.0;
  double seconds = 0.0;  // informational; kept out of the deterministic report
};

struct CrossValResult {
  EvalRow row;
  std::vector<FoldResult> folds;
  std::vector<double> holdout_losses;  // one per fold's best checkpoint
};

// 5-fold-style protocol: train each fold on the pool minus its validation
// chunk, pick each fold's best-validation checkpoint, evaluate all of them
// on the common holdout, and report mean/std across folds plus the
// training-free baselines on the same holdout.
inline CrossValResult cross_validate(const Dataset& ds, const TrainConfig& cfg,
                                     size_t requested_k = 0, size_t threads = 0) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  DataSplit split = DataSplit::make(ds.count(), cfg.folds, cfg.holdout_fraction,
                                    cfg.seed);
  CrossValResult res;
  res.folds.resize(cfg.folds);
  parallel_for(
      cfg.folds,
      [&](size_t f) {
        std::vector<size_t> train_idx = split.fold_train(f);
        res.folds[f] = train_fold(ds, train_idx, split.fold_val[f], cfg, f);
      },
      threads);

  res.holdout_losses.resize(cfg.folds);
  for (size_t f = 0; f < cfg.folds; ++f) {
    res.holdout_losses[f] = evaluate(res.folds[f].best_state, ds, split.holdout);
  }
  double mean = std::accumulate(res.holdout_losses.begin(),
                                res.holdout_losses.end(), 0.0) /
                static_cast<double>(cfg.folds);
  double var = 0.0;
  for (double v : res.holdout_losses) var += (v - mean) * (v - mean);
  var /= static_cast<double>(cfg.folds > 1 ? cfg.folds - 1 : 1);

  BaselineLosses base = baseline_losses(ds, split.holdout);
  EvalRow& row = res.row;
  row.method = pool_method_name(cfg.encoder.pool_method);
  size_t k = ds.labels.empty() ? 0 : ds.labels[0].k;
  row.k = requested_k ? requested_k : k;
  row.snr = static_cast<double>(row.k) / static_cast<double>(ds.n());
  row.mean_loss = mean;
  row.std_loss = std::sqrt(var);
  row.baseline_centroid = base.centroid;
  row.baseline_target = base.target;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
  return res;
}

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_report_csv(const std::vector<EvalRow>& rows,
                             const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "method,k,snr,mean_loss,std_loss,baseline_centroid,baseline_target\n";
  for (const EvalRow& r : rows) {
    os << r.method << ',' << r.k << ',' << format_g17(r.snr) << ','
       << format_g17(r.mean_loss) << ',' << format_g17(r.std_loss) << ','
       << format_g17(r.baseline_centroid) << ',' << format_g17(r.baseline_target)
       << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

inline void write_report_json(const std::vector<EvalRow>& rows,
                              const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EvalRow& r : rows) {
    arr.push_back({{"method", r.method},
                   {"k", r.k},
                   {"snr", r.snr},
                   {"mean_loss", r.mean_loss},
                   {"std_loss", r.std_loss},
                   {"baseline_centroid", r.baseline_centroid},
                   {"baseline_target", r.baseline_target}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << arr.dump(2) << "\n";
}

// Wall-clock timings live in their own file so the main report stays a pure
// function of (dataset bytes, config).
inline void write_report_timings(const std::vector<EvalRow>& rows,
                                 const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EvalRow& r : rows) {
    arr.push_back({{"method", r.method}, {"k", r.k}, {"seconds", r.seconds}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << arr.dump(2) << "\n";
}

}  // namespace poolbench
