#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poolbench/bench.hpp"
#include "poolbench/bounds.hpp"
#include "poolbench/checkpoint.hpp"
#include "poolbench/dataset.hpp"
#include "poolbench/train_eval.hpp"

namespace poolbench::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline ScaleMode scale_mode_from_name(const std::string& s) {
  if (s == "divide") return ScaleMode::kDivideSqrtD;
  if (s == "multiply") return ScaleMode::kMultiplySqrtD;
  throw ConfigError("scale-mode must be 'divide' or 'multiply'");
}

inline TaskKind task_from_name(const std::string& s) {
  if (s == "knn") return TaskKind::kKnn;
  if (s == "min") return TaskKind::kMin;
  if (s == "max") return TaskKind::kMax;
  if (s == "avg") return TaskKind::kAvg;
  throw ConfigError("task must be one of knn|min|max|avg");
}

// Every run prints the fully resolved configuration it executed with, so a
// run is reproducible from its own log.
inline void echo_config(const std::string& sub, const ojson& values) {
  ojson out;
  for (auto it = values.begin(); it != values.end(); ++it) {
    out[sub + "." + it.key()] = it.value();
  }
  std::cout << "effective-config " << out.dump() << "\n";
}

// Applies --config file values as defaults: config tokens are injected ahead
// of the explicit command-line flags, and every option takes the last value.
inline std::vector<std::string> apply_config_file(
    const std::vector<std::string>& args, const std::string& sub,
    CLI::App* subapp) {
  std::string config_path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  std::ifstream is(config_path);
  if (!is) throw IoError("cannot open config file: " + config_path);
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config file must be a JSON object");

  std::vector<std::string> injected;
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    const std::string& key = it.key();
    size_t dot = key.find('.');
    std::string key_sub = dot == std::string::npos ? "" : key.substr(0, dot);
    std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (!key_sub.empty() && key_sub != sub) {
      // Keys for other subcommands are allowed so one file can drive a
      // pipeline, but they must at least name a real subcommand.
      continue;
    }
    CLI::Option* opt = nullptr;
    try {
      opt = subapp->get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("unknown config key: " + key);
    }
    if (opt == nullptr) throw ConfigError("unknown config key: " + key);
    std::string value;
    if (it.value().is_string()) value = it.value().get<std::string>();
    else if (it.value().is_array()) {
      // Vector options take space-separated values.
      std::string joined;
      for (const auto& v : it.value()) {
        if (!joined.empty()) joined += " ";
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      for (const auto& piece : CLI::detail::split(joined, ' ')) {
        injected.push_back("--" + name);
        injected.push_back(piece);
      }
      continue;
    } else {
      value = it.value().dump();
    }
    injected.push_back("--" + name + "=" + value);
  }
  std::vector<std::string> out;
  out.push_back(args.empty() ? sub : args[0]);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + (args.empty() ? 0 : 1), args.end());
  return out;
}

struct CommonFlags {
  std::string config;
  uint64_t seed = 0;
  std::string out = ".";
  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file with flat dotted keys");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--out", out, "output directory");
  }
};

// ---------------------------------------------------------------------------

inline int cmd_gen_data(CommonFlags& common, size_t count, size_t n, size_t d,
                        const std::string& scale_mode) {
  ScaleMode mode = scale_mode_from_name(scale_mode);
  fs::create_directories(common.out);
  Dataset ds = generate_dataset(count, n, d, common.seed, mode);
  fs::path path = fs::path(common.out) / "dataset.pbset";
  write_dataset(path.string(), ds);
  write_dataset_sidecar(path.string() + ".json", ds);
  echo_config("gen-data", ojson{{"count", count},
                                {"n", n},
                                {"d", d},
                                {"scale-mode", scale_mode},
                                {"seed", common.seed},
                                {"out", common.out}});
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

inline int cmd_make_targets(CommonFlags& common, const std::string& in,
                            const std::string& task, size_t k) {
  TaskKind kind = task_from_name(task);
  Dataset ds = read_dataset(in);
  label_dataset(ds, kind, k, common.seed);
  fs::create_directories(common.out);
  std::string stem = "targets_" + task;
  if (kind == TaskKind::kKnn) stem += "_k" + std::to_string(k);
  fs::path path = fs::path(common.out) / (stem + ".pbset");
  write_dataset(path.string(), ds);
  write_dataset_sidecar(path.string() + ".json", ds);
  echo_config("make-targets", ojson{{"in", in},
                                    {"task", task},
                                    {"k", k},
                                    {"seed", common.seed},
                                    {"out", common.out}});
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

struct EncoderFlags {
  std::string method = "avg";
  size_t layers = 12;
  size_t heads = 8;
  size_t dim_hidden = 16;
  size_t dim_ff = 64;
  size_t adapool_heads = 1;
  double dropout_ff = 0.1;
  double dropout_attn = 0.0;

  void attach(CLI::App* app) {
    app->add_option("--method", method, "pooling head: avg|max|cls|ada");
    app->add_option("--layers", layers, "encoder layers");
    app->add_option("--heads", heads, "attention heads");
    app->add_option("--dim-hidden", dim_hidden, "hidden width");
    app->add_option("--dim-ff", dim_ff, "feedforward width");
    app->add_option("--adapool-heads", adapool_heads, "adaptive pool heads");
    app->add_option("--dropout-ff", dropout_ff, "feedforward dropout");
    app->add_option("--dropout-attn", dropout_attn, "attention dropout");
  }

  EncoderConfig build(size_t dim_input, uint64_t seed) const {
    EncoderConfig enc;
    enc.num_layers = layers;
    enc.num_heads = heads;
    enc.dim_input = dim_input;
    enc.dim_hidden = dim_hidden;
    enc.dim_ff = dim_ff;
    enc.adapool_heads = adapool_heads;
    enc.dropout_ff = dropout_ff;
    enc.dropout_attn = dropout_attn;
    enc.pool_method = pool_method_from_name(method);
    enc.seed = seed;
    enc.validate();
    return enc;
  }

  ojson echo() const {
    return ojson{{"method", method},
                 {"layers", layers},
                 {"heads", heads},
                 {"dim-hidden", dim_hidden},
                 {"dim-ff", dim_ff},
                 {"adapool-heads", adapool_heads},
                 {"dropout-ff", dropout_ff},
                 {"dropout-attn", dropout_attn}};
  }
};

inline int cmd_train(CommonFlags& common, const std::string& data,
                     const EncoderFlags& enc_flags, size_t epochs, size_t batch,
                     double lr, size_t folds, double holdout) {
  Dataset ds = read_dataset(data);
  if (!ds.task) throw ConfigError("train: dataset has no targets; run make-targets");
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.lr = lr;
  cfg.folds = folds;
  cfg.holdout_fraction = holdout;
  cfg.seed = common.seed;
  cfg.encoder = enc_flags.build(ds.d(), common.seed);

  CrossValResult res = cross_validate(ds, cfg);
  fs::create_directories(common.out);
  std::string tag = res.row.method + "_k" + std::to_string(res.row.k);
  for (size_t f = 0; f < res.folds.size(); ++f) {
    fs::path ck = fs::path(common.out) /
                  ("ckpt_" + tag + "_fold" + std::to_string(f) + ".pbckpt");
    save_checkpoint(ck.string(), res.folds[f].best_state);
  }
  std::vector<EvalRow> rows{res.row};
  write_report_csv(rows, (fs::path(common.out) / ("report_" + tag + ".csv")).string());
  write_report_json(rows,
                    (fs::path(common.out) / ("report_" + tag + ".json")).string());
  write_report_timings(
      rows, (fs::path(common.out) / ("timings_" + tag + ".json")).string());

  ojson echo = enc_flags.echo();
  echo["data"] = data;
  echo["epochs"] = epochs;
  echo["batch"] = batch;
  echo["lr"] = lr;
  echo["folds"] = folds;
  echo["holdout"] = holdout;
  echo["seed"] = common.seed;
  echo["out"] = common.out;
  echo_config("train", echo);
  std::cout << "method=" << res.row.method << " k=" << res.row.k
            << " holdout_loss=" << format_g17(res.row.mean_loss)
            << " std=" << format_g17(res.row.std_loss)
            << " baseline_centroid=" << format_g17(res.row.baseline_centroid)
            << " baseline_target=" << format_g17(res.row.baseline_target) << "\n";
  return 0;
}

inline int cmd_eval(CommonFlags& common, const std::string& ckpt,
                    const std::string& data, const EncoderFlags& enc_flags) {
  Dataset ds = read_dataset(data);
  if (!ds.task) throw ConfigError("eval: dataset has no targets; run make-targets");
  EncoderConfig enc = enc_flags.build(ds.d(), common.seed);
  ModelState st = load_checkpoint(ckpt, enc);
  std::vector<size_t> all(ds.count());
  std::iota(all.begin(), all.end(), 0);
  double loss = evaluate(st, ds, all);
  BaselineLosses base = baseline_losses(ds);
  ojson echo = enc_flags.echo();
  echo["ckpt"] = ckpt;
  echo["data"] = data;
  echo["seed"] = common.seed;
  echo_config("eval", echo);
  std::cout << "mean_loss=" << format_g17(loss)
            << " baseline_centroid=" << format_g17(base.centroid)
            << " baseline_target=" << format_g17(base.target) << "\n";
  return 0;
}

inline int cmd_verify_bounds(CommonFlags& common, size_t cases, size_t max_n) {
  if (max_n < 2) throw ConfigError("verify-bounds: max-n must be >= 2");
  fs::create_directories(common.out);
  fs::path path = fs::path(common.out) / "bounds_report.csv";
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << bounds_report_csv_header() << "\n";

  CounterRng rng(common.seed);
  double worst = std::numeric_limits<double>::infinity();
  size_t failures = 0;
  BoundsReport worst_rep;
  for (size_t c = 0; c < cases; ++c) {
    size_t n = 2 + rng.uniform_index(max_n - 1);
    size_t k = 1 + rng.uniform_index(n - 1);
    std::vector<double> r(n);
    for (double& v : r) v = rng.uniform(-5.0, 5.0);
    std::vector<uint8_t> mask(n, 0);
    for (size_t i = 0; i < k; ++i) mask[i] = 1;
    rng.shuffle(mask.data(), mask.size());
    BoundsReport rep = verify_bounds(r, mask);
    if (rep.worst_slack < worst) {
      worst = rep.worst_slack;
      worst_rep = rep;
    }
    if (!rep.pass) {
      ++failures;
      os << bounds_report_csv_row(rep) << "\n";
    }
  }
  os << bounds_report_csv_row(worst_rep) << "\n";
  echo_config("verify-bounds", ojson{{"cases", cases},
                                     {"max-n", max_n},
                                     {"seed", common.seed},
                                     {"out", common.out}});
  std::cout << "cases=" << cases << " failures=" << failures
            << " worst_slack=" << format_g17(worst) << "\n";
  std::cout << "wrote " << path.string() << "\n";
  if (failures > 0) {
    throw VerificationFailure("bound violation detected; see " + path.string());
  }
  return 0;
}

inline int cmd_verify_corollaries(CommonFlags& common) {
  CounterRng rng(common.seed);
  size_t failures = 0;
  auto expect = [&](bool ok, const char* what) {
    std::cout << (ok ? "pass " : "FAIL ") << what << "\n";
    if (!ok) ++failures;
  };

  {  // Noiseless sets: average pooling is signal-optimal.
    bool ok = true;
    for (int t = 0; t < 200; ++t) {
      size_t n = 2 + rng.uniform_index(20), d = 1 + rng.uniform_index(8);
      std::vector<double> data(n * d);
      for (double& v : data) v = rng.uniform(-3, 3);
      VectorSet x(n, d, std::move(data));
      x.signal_mask = std::vector<uint8_t>(n, 1);
      auto a = avg_pool(x);
      auto c = signal_optimal_pool(x);
      for (size_t j = 0; j < d; ++j) ok &= std::abs(a[j] - c[j]) < 1e-12;
    }
    expect(ok, "avg_pool equals the signal centroid on noiseless sets");
  }
  {  // Matched sub-centroids make avg_pool optimal; perturbing breaks it.
    bool ok = true;
    for (int t = 0; t < 200; ++t) {
      size_t k = 1 + rng.uniform_index(6), d = 2 + rng.uniform_index(6);
      std::vector<double> data((2 * k) * d);
      for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < d; ++j) data[i * d + j] = rng.uniform(-2, 2);
      // Build noise with the same centroid by mirroring signal rows about it.
      std::vector<double> centroid(d, 0.0);
      for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < d; ++j) centroid[j] += data[i * d + j] / k;
      for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < d; ++j)
          data[(k + i) * d + j] = 2.0 * centroid[j] - data[i * d + j];
      VectorSet x(2 * k, d, std::move(data));
      std::vector<uint8_t> mask(2 * k, 0);
      for (size_t i = 0; i < k; ++i) mask[i] = 1;
      x.signal_mask = mask;
      auto a = avg_pool(x);
      auto c = signal_optimal_pool(x);
      for (size_t j = 0; j < d; ++j) ok &= std::abs(a[j] - c[j]) < 1e-9;
      VectorSet y = x;
      y.data[(2 * k - 1) * d] += 1.0;
      double diff = 0.0;
      auto a2 = avg_pool(y);
      auto c2 = signal_optimal_pool(y);
      for (size_t j = 0; j < d; ++j) diff += std::abs(a2[j] - c2[j]);
      ok &= diff > 1e-6;
    }
    expect(ok, "avg_pool optimal iff signal and noise centroids coincide");
  }
  {  // A unique dominant signal vector makes max_pool optimal.
    bool ok = true;
    for (int t = 0; t < 200; ++t) {
      size_t n = 2 + rng.uniform_index(12), d = 1 + rng.uniform_index(8);
      std::vector<double> data(n * d);
      for (double& v : data) v = rng.uniform(-2, 2);
      size_t star = rng.uniform_index(n);
      for (size_t j = 0; j < d; ++j) data[star * d + j] = 3.0 + rng.uniform(0, 2);
      VectorSet x(n, d, std::move(data));
      std::vector<uint8_t> mask(n, 0);
      mask[star] = 1;
      x.signal_mask = mask;
      auto m = max_pool(x);
      auto c = signal_optimal_pool(x);
      for (size_t j = 0; j < d; ++j) ok &= m[j] == c[j];
    }
    expect(ok, "max_pool equals the signal centroid for one dominant vector");
  }
  {  // Zero query projection collapses adaptive pooling to the average.
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
      size_t n = 1 + rng.uniform_index(12), d = 2 + rng.uniform_index(6);
      std::vector<double> data(n * d);
      for (double& v : data) v = rng.uniform(-2, 2);
      VectorSet x(n, d, std::move(data));
      AdaPoolParams p = AdaPoolParams::identity(d);
      std::fill(p.wq.begin(), p.wq.end(), 0.0);
      std::vector<double> q(d);
      for (double& v : q) v = rng.uniform(-2, 2);
      auto out = ada_pool(x, q, p);
      auto avg = avg_pool(x);
      for (size_t j = 0; j < d; ++j) ok &= std::abs(out[j] - avg[j]) < 1e-12;
    }
    expect(ok, "ada_pool with W_Q = 0, W_V = I reduces to avg_pool");
  }
  {  // One head per feature with a sharp positive query approximates max.
    bool ok = true;
    for (int t = 0; t < 50; ++t) {
      size_t n = 4, d = 1 + rng.uniform_index(6);
      std::vector<double> data(n * d);
      for (size_t j = 0; j < d; ++j) {
        std::vector<double> vals(n);
        for (size_t i = 0; i < n; ++i)
          vals[i] = 0.5 + 0.5 * static_cast<double>(i) + rng.uniform(0, 0.04);
        rng.shuffle(vals.data(), n);
        for (size_t i = 0; i < n; ++i) data[i * d + j] = vals[i];
      }
      VectorSet x(n, d, std::move(data));
      AdaPoolParams p = AdaPoolParams::identity(d, d);
      for (size_t i = 0; i < d; ++i) p.wq[i * d + i] = 50.0;
      std::vector<double> q(d, 1.0);
      auto out = ada_pool(x, q, p);
      auto m = max_pool(x);
      for (size_t j = 0; j < d; ++j) ok &= std::abs(out[j] - m[j]) < 1e-3;
    }
    expect(ok, "multi-head ada_pool with a sharp query approximates max_pool");
  }
  {  // The signal centroid minimizes signal loss against random probes.
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
      size_t n = 3 + rng.uniform_index(12), d = 1 + rng.uniform_index(6);
      std::vector<double> data(n * d);
      for (double& v : data) v = rng.uniform(-2, 2);
      VectorSet x(n, d, std::move(data));
      std::vector<uint8_t> mask(n, 0);
      size_t k = 1 + rng.uniform_index(n - 1);
      for (size_t i = 0; i < k; ++i) mask[i] = 1;
      rng.shuffle(mask.data(), mask.size());
      x.signal_mask = mask;
      auto c = signal_optimal_pool(x);
      double best = signal_loss(x, c);
      for (int probe = 0; probe < 100; ++probe) {
        std::vector<double> cand = c;
        for (double& v : cand) v += rng.uniform(-1, 1);
        ok &= signal_loss(x, cand) >= best;
      }
    }
    expect(ok, "signal centroid minimizes signal loss under random probes");
  }

  echo_config("verify-corollaries", ojson{{"seed", common.seed}});
  if (failures > 0) {
    throw VerificationFailure("corollary check failed");
  }
  std::cout << "all corollary checks passed\n";
  return 0;
}

inline int cmd_bench(CommonFlags& common, const std::vector<std::string>& methods,
                     std::vector<size_t> n_list, size_t d, size_t reps,
                     double slack) {
  fs::create_directories(common.out);
  std::vector<BenchResult> all;
  bool in_window = true;
  for (const std::string& name : methods) {
    BenchMethod m = bench_method_from_name(name);
    std::vector<BenchResult> rows = bench_pooling(m, n_list, {d}, reps);
    for (const BenchResult& r : rows) in_window &= r.slope >= 0.8 - slack &&
                                                   r.slope <= 1.3 + slack;
    all.insert(all.end(), rows.begin(), rows.end());
  }
  fs::path path = fs::path(common.out) / "bench.csv";
  write_bench_csv(all, path.string());
  echo_config("bench", ojson{{"methods", methods},
                             {"n-list", n_list},
                             {"d", d},
                             {"reps", reps},
                             {"slack", slack},
                             {"out", common.out}});
  for (const BenchResult& r : all) {
    std::cout << bench_method_name(r.method) << " n=" << r.n << " d=" << r.d
              << " median_ns=" << r.median_ns << " slope=" << r.slope << "\n";
  }
  std::cout << "wrote " << path.string() << "\n";
  if (!in_window) {
    throw VerificationFailure("fitted growth exponent outside [0.8, 1.3]");
  }
  return 0;
}

// ---------------------------------------------------------------------------

// Parses and dispatches; throws poolbench errors for the wrappers to map to
// exit codes.
inline int run_or_throw(std::vector<std::string> args) {
  CLI::App app{"global vector pooling workbench"};
  app.require_subcommand(1);

  CommonFlags common;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  size_t gd_count = 1000, gd_n = 128, gd_d = 16;
  std::string gd_scale = "divide";
  gen->add_option("--count", gd_count, "number of samples");
  gen->add_option("--n", gd_n, "vectors per sample");
  gen->add_option("--d", gd_d, "features per vector");
  gen->add_option("--scale-mode", gd_scale, "sqrt(d) scaling: divide|multiply");

  // make-targets
  auto* mk = app.add_subcommand("make-targets", "attach supervised targets");
  std::string mk_in, mk_task = "knn";
  size_t mk_k = 1;
  mk->add_option("--in", mk_in, "input dataset path")->required();
  mk->add_option("--task", mk_task, "knn|min|max|avg");
  mk->add_option("--k", mk_k, "neighbor count for knn");

  // train
  auto* tr = app.add_subcommand("train", "cross-validated training");
  std::string tr_data;
  EncoderFlags tr_enc;
  size_t tr_epochs = 100, tr_batch = 750, tr_folds = 5;
  double tr_lr = 5.0e-4, tr_holdout = 0.1;
  tr->add_option("--data", tr_data, "labeled dataset path")->required();
  tr_enc.attach(tr);
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--folds", tr_folds, "cross-validation folds");
  tr->add_option("--holdout", tr_holdout, "holdout fraction");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data;
  EncoderFlags ev_enc;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "labeled dataset path")->required();
  ev_enc.attach(ev);

  // verify-bounds
  auto* vb = app.add_subcommand("verify-bounds",
                                "randomized sweep of the weight-error bounds");
  size_t vb_cases = 100000, vb_max_n = 64;
  vb->add_option("--cases", vb_cases, "number of random cases");
  vb->add_option("--max-n", vb_max_n, "largest set size");

  // verify-corollaries
  auto* vc = app.add_subcommand("verify-corollaries",
                                "construction checks of the pooling reductions");

  // bench
  auto* bn = app.add_subcommand("bench", "pooling complexity benchmark");
  std::vector<std::string> bn_methods{"avg", "max", "ada", "signal_optimal"};
  std::vector<size_t> bn_nlist{1000, 2000, 4000, 8000};
  size_t bn_d = 16, bn_reps = 11;
  double bn_slack = 0.0;
  bn->add_option("--methods", bn_methods, "methods to time");
  bn->add_option("--n-list", bn_nlist, "set sizes, ascending");
  bn->add_option("--d", bn_d, "feature dimension");
  bn->add_option("--reps", bn_reps, "timed repetitions per size");
  bn->add_option("--slack", bn_slack, "widen the slope acceptance window");

  for (CLI::App* sub : {gen, mk, tr, ev, vb, vc, bn}) {
    common.attach(sub);
    for (CLI::Option* opt : sub->get_options()) {
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  // Resolve the config file (config values act as overridable defaults).
  if (!args.empty()) {
    for (CLI::App* sub : {gen, mk, tr, ev, vb, vc, bn}) {
      if (sub->get_name() == args[0]) {
        args = apply_config_file(args, sub->get_name(), sub);
        break;
      }
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  if (gen->parsed()) return cmd_gen_data(common, gd_count, gd_n, gd_d, gd_scale);
  if (mk->parsed()) return cmd_make_targets(common, mk_in, mk_task, mk_k);
  if (tr->parsed())
    return cmd_train(common, tr_data, tr_enc, tr_epochs, tr_batch, tr_lr, tr_folds,
                     tr_holdout);
  if (ev->parsed()) return cmd_eval(common, ev_ckpt, ev_data, ev_enc);
  if (vb->parsed()) return cmd_verify_bounds(common, vb_cases, vb_max_n);
  if (vc->parsed()) return cmd_verify_corollaries(common);
  if (bn->parsed())
    return cmd_bench(common, bn_methods, bn_nlist, bn_d, bn_reps, bn_slack);
  return 1;
}

inline int run(std::vector<std::string> args) {
  try {
    return run_or_throw(std::move(args));
  } catch (const VerificationFailure& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run(int argc, const char* const* argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace poolbench::cli
