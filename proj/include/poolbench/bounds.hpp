#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "poolbench/common.hpp"

namespace poolbench {

// Summary statistics of a relation-score vector split into signal and noise
// neighborhoods: the width of each neighborhood, the minimum margin M
// between them, and the maximum distance D = M + eps_s + eps_eta.
struct RelationStats {
  double eps_s = 0.0;
  double eps_eta = 0.0;
  double m = 0.0;  // may be negative when the neighborhoods overlap
  double d = 0.0;
  size_t k = 0;
  size_t n = 0;
};

// Closed-form envelopes on how far softmax attention weights can sit from
// the signal-optimal weights (1/k on signal, 0 on noise).
struct WeightBounds {
  double l_s = 0.0;
  double u_s = 0.0;
  double l_eta = 0.0;
  double u_eta = 0.0;
};

inline RelationStats relation_stats(std::span<const double> r,
                                    std::span<const uint8_t> mask) {
  if (r.size() != mask.size()) throw ShapeError("relation_stats: length mismatch");
  check_finite(r, "relation scores");
  double smin = std::numeric_limits<double>::infinity(), smax = -smin;
  double nmin = smin, nmax = -smin;
  size_t k = 0;
  for (size_t i = 0; i < r.size(); ++i) {
    if (mask[i]) {
      ++k;
      smin = std::min(smin, r[i]);
      smax = std::max(smax, r[i]);
    } else {
      nmin = std::min(nmin, r[i]);
      nmax = std::max(nmax, r[i]);
    }
  }
  if (k == 0 || k == r.size()) {
    throw DomainError("relation_stats: both signal and noise must be non-empty");
  }
  RelationStats st;
  st.k = k;
  st.n = r.size();
  st.eps_s = smax - smin;
  st.eps_eta = nmax - nmin;
  st.m = smin - nmax;
  st.d = st.m + st.eps_s + st.eps_eta;  // equals smax - nmin
  return st;
}

inline WeightBounds weight_bounds(const RelationStats& st) {
  if (st.k == 0 || st.k > st.n) throw DomainError("weight_bounds: invalid k");
  double k = static_cast<double>(st.k);
  double noise = static_cast<double>(st.n - st.k);
  WeightBounds b;
  b.l_s = 1.0 / k - 1.0 / (1.0 + (k - 1.0) * std::exp(-st.eps_s) +
                           noise * std::exp(-st.d));
  b.u_s = 1.0 / k - 1.0 / (1.0 + (k - 1.0) * std::exp(st.eps_s) +
                           noise * std::exp(-st.m));
  b.l_eta = -1.0 / (k * std::exp(st.m) + 1.0 + (noise - 1.0) * std::exp(-st.eps_eta));
  b.u_eta = -1.0 / (k * std::exp(st.d) + 1.0 + (noise - 1.0) * std::exp(st.eps_eta));
  return b;
}

// Direct softmax of the relation scores (max-subtracted).
inline std::vector<double> softmax_weights(std::span<const double> r) {
  std::vector<double> w(r.size());
  double mx = r[0];
  for (double v : r) mx = std::max(mx, v);
  double sum = 0.0;
  for (size_t i = 0; i < r.size(); ++i) {
    w[i] = std::exp(r[i] - mx);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

struct BoundsReport {
  RelationStats stats;
  WeightBounds bounds;
  // Worst slack of the bound inequalities across all indices; negative slack
  // beyond the tolerance is a violation.
  double worst_slack = std::numeric_limits<double>::infinity();
  bool pass = true;
  size_t violating_index = 0;
  double violating_slack = 0.0;
};

// Computes the attention weights directly and checks that every one lies
// inside the predicted envelope: for signal i, L_s <= 1/k - w_i <= U_s; for
// noise i, L_eta <= -w_i <= U_eta. Slack below -tolerance is a violation.
inline BoundsReport verify_bounds(std::span<const double> r,
                                  std::span<const uint8_t> mask,
                                  double tolerance = 1e-12) {
  BoundsReport rep;
  rep.stats = relation_stats(r, mask);
  rep.bounds = weight_bounds(rep.stats);
  std::vector<double> w = softmax_weights(r);
  double inv_k = 1.0 / static_cast<double>(rep.stats.k);
  for (size_t i = 0; i < r.size(); ++i) {
    double err = mask[i] ? inv_k - w[i] : -w[i];
    double lo = mask[i] ? rep.bounds.l_s : rep.bounds.l_eta;
    double hi = mask[i] ? rep.bounds.u_s : rep.bounds.u_eta;
    double slack = std::min(err - lo, hi - err);
    if (slack < rep.worst_slack) {
      rep.worst_slack = slack;
      rep.violating_index = i;
      rep.violating_slack = slack;
    }
  }
  rep.pass = rep.worst_slack >= -tolerance;
  return rep;
}

inline std::string bounds_report_csv_header() {
  return "n,k,eps_s,eps_eta,margin,distance,l_s,u_s,l_eta,u_eta,worst_slack,pass";
}

inline std::string bounds_report_csv_row(const BoundsReport& rep) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d",
                rep.stats.n, rep.stats.k, rep.stats.eps_s, rep.stats.eps_eta,
                rep.stats.m, rep.stats.d, rep.bounds.l_s, rep.bounds.u_s,
                rep.bounds.l_eta, rep.bounds.u_eta, rep.worst_slack,
                rep.pass ? 1 : 0);
  return buf;
}

}  // namespace poolbench
