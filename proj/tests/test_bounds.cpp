#include <catch_amalgamated.hpp>

#include <cmath>

#include "poolbench/bounds.hpp"
#include "poolbench/rng.hpp"
#include "test_helpers.hpp"

using namespace poolbench;
using namespace poolbench::test;

TEST_CASE("relation stats definition arithmetic", "[bounds]") {
  std::vector<double> r{2.0, 2.5, 0.0, 0.5};
  std::vector<uint8_t> mask{1, 1, 0, 0};
  RelationStats st = relation_stats(r, mask);
  CHECK(st.eps_s == 0.5);
  CHECK(st.eps_eta == 0.5);
  CHECK(st.m == 1.5);
  CHECK(st.d == 2.5);
  CHECK(st.d == st.m + st.eps_s + st.eps_eta);
  CHECK(st.k == 2);
  CHECK(st.n == 4);

  std::vector<double> same{1.0, 1.0, 0.0};
  std::vector<uint8_t> m2{1, 1, 0};
  CHECK(relation_stats(same, m2).eps_s == 0.0);

  // Overlapping neighborhoods give a negative margin.
  std::vector<double> overlap{1.0, 3.0, 2.0, 0.0};
  std::vector<uint8_t> m3{1, 1, 0, 0};
  RelationStats st3 = relation_stats(overlap, m3);
  CHECK(st3.m == -1.0);
  CHECK(st3.d == 3.0);

  std::vector<uint8_t> allsig{1, 1, 1, 1};
  CHECK_THROWS_AS(relation_stats(overlap, allsig), DomainError);
  std::vector<uint8_t> nosig{0, 0, 0, 0};
  CHECK_THROWS_AS(relation_stats(overlap, nosig), DomainError);
}

TEST_CASE("weight bounds closed forms", "[bounds]") {
  // k = n synthetic stats: only the (k-1) term survives, bounds collapse to 0.
  RelationStats noiseless;
  noiseless.k = 5;
  noiseless.n = 5;
  noiseless.eps_s = 0.0;
  WeightBounds wb = weight_bounds(noiseless);
  CHECK(wb.l_s == 0.0);
  CHECK(wb.u_s == 0.0);

  // n=2, k=1, r_s=1, r_eta=0: both signal bounds collapse to 1 - 1/(1+e^-1).
  std::vector<double> r{1.0, 0.0};
  std::vector<uint8_t> mask{1, 0};
  RelationStats st = relation_stats(r, mask);
  CHECK(st.m == 1.0);
  CHECK(st.d == 1.0);
  WeightBounds b = weight_bounds(st);
  double expect = 1.0 - 1.0 / (1.0 + std::exp(-1.0));
  CHECK(b.l_s == Catch::Approx(expect).epsilon(1e-12));
  CHECK(b.u_s == Catch::Approx(expect).epsilon(1e-12));
  CHECK(b.l_s == Catch::Approx(0.26894).margin(1e-5));
  // Direct softmax oracle: w = e/(e+1), error 1/k - w matches the bound.
  double w = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(1.0 - w == Catch::Approx(b.l_s).epsilon(1e-12));

  // As the margin grows all four bounds vanish.
  RelationStats far = st;
  far.m = 200.0;
  far.d = 200.0;
  WeightBounds fb = weight_bounds(far);
  CHECK(std::abs(fb.l_s) < 1e-12);
  CHECK(std::abs(fb.u_s) < 1e-12);
  CHECK(std::abs(fb.l_eta) < 1e-12);
  CHECK(std::abs(fb.u_eta) < 1e-12);
}

TEST_CASE("verify_bounds on the two-point case has zero slack", "[bounds]") {
  std::vector<double> r{1.0, 0.0};
  std::vector<uint8_t> mask{1, 0};
  BoundsReport rep = verify_bounds(r, mask);
  CHECK(rep.pass);
  CHECK(std::abs(rep.worst_slack) < 1e-12);
}

TEST_CASE("uniform scores give uniform weights inside the bounds", "[bounds]") {
  std::vector<double> r(6, 0.7);
  std::vector<uint8_t> mask{1, 1, 0, 0, 0, 0};
  BoundsReport rep = verify_bounds(r, mask);
  CHECK(rep.pass);
  WeightBounds b = rep.bounds;
  double err_sig = 1.0 / 2.0 - 1.0 / 6.0;
  CHECK(b.l_s <= err_sig);
  CHECK(err_sig <= b.u_s);
  CHECK(b.l_eta <= -1.0 / 6.0);
  CHECK(-1.0 / 6.0 <= b.u_eta);
}

TEST_CASE("bounds contain the direct softmax weights on random cases", "[bounds]") {
  CounterRng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    size_t n = 2 + rng.uniform_index(63);
    size_t k = 1 + rng.uniform_index(n - 1);
    std::vector<double> r(n);
    for (double& v : r) v = rng.uniform(-5.0, 5.0);
    std::vector<uint8_t> mask(n, 0);
    for (size_t i = 0; i < k; ++i) mask[i] = 1;
    rng.shuffle(mask.data(), mask.size());
    BoundsReport rep = verify_bounds(r, mask);
    if (!rep.pass) {
      INFO("n=" << n << " k=" << k << " slack=" << rep.worst_slack);
      REQUIRE(rep.pass);
    }
  }
}

TEST_CASE("noise envelopes tighten monotonically with the margin", "[bounds]") {
  // |L_eta|, |U_eta| and U_s never grow as M increases at fixed widths.
  for (double eps : {0.0, 0.3, 1.0}) {
    RelationStats st;
    st.k = 4;
    st.n = 12;
    st.eps_s = eps;
    st.eps_eta = eps;
    double prev_leta = 1e300, prev_ueta = 1e300, prev_us = 1e300;
    for (double m = -2.0; m <= 6.0; m += 0.25) {
      st.m = m;
      st.d = m + st.eps_s + st.eps_eta;
      WeightBounds b = weight_bounds(st);
      CHECK(std::abs(b.l_eta) <= prev_leta + 1e-15);
      CHECK(std::abs(b.u_eta) <= prev_ueta + 1e-15);
      CHECK(b.u_s <= prev_us + 1e-15);
      prev_leta = std::abs(b.l_eta);
      prev_ueta = std::abs(b.u_eta);
      prev_us = b.u_s;
    }
  }
  // With tight clusters (eps = 0) the signal lower bound is monotone too.
  RelationStats st;
  st.k = 3;
  st.n = 10;
  st.eps_s = 0.0;
  st.eps_eta = 0.0;
  double prev = 1e300;
  for (double m = -2.0; m <= 6.0; m += 0.25) {
    st.m = m;
    st.d = m;
    WeightBounds b = weight_bounds(st);
    CHECK(b.l_s >= 0.0);
    CHECK(std::abs(b.l_s) <= prev + 1e-15);
    prev = std::abs(b.l_s);
  }
}

TEST_CASE("weights and bounds are shift invariant", "[bounds]") {
  CounterRng rng(303);
  std::vector<double> r(9);
  for (double& v : r) v = rng.uniform(-2, 2);
  std::vector<uint8_t> mask{1, 0, 1, 0, 0, 1, 0, 0, 0};
  BoundsReport a = verify_bounds(r, mask);
  std::vector<double> shifted = r;
  for (double& v : shifted) v += 4.25;
  BoundsReport b = verify_bounds(shifted, mask);
  CHECK(std::abs(a.bounds.l_s - b.bounds.l_s) < 1e-12);
  CHECK(std::abs(a.bounds.u_s - b.bounds.u_s) < 1e-12);
  CHECK(std::abs(a.bounds.l_eta - b.bounds.l_eta) < 1e-12);
  CHECK(std::abs(a.bounds.u_eta - b.bounds.u_eta) < 1e-12);
  CHECK(max_abs_diff(softmax_weights(r), softmax_weights(shifted)) < 1e-12);
}

TEST_CASE("report row serializes stats and verdict", "[bounds]") {
  std::vector<double> r{1.0, 0.0};
  std::vector<uint8_t> mask{1, 0};
  BoundsReport rep = verify_bounds(r, mask);
  std::string row = bounds_report_csv_row(rep);
  CHECK(row.find("2,1,") == 0);
  CHECK(row.back() == '1');
}
