#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bd/eval.hpp"
#include "helpers.hpp"

using namespace bd;

namespace {

// Student-t CDF by composite Simpson integration of the density from 0 to |t|,
// normalized with lgamma. Independent of the library the evaluator uses.
double t_two_sided_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1) / 2); };
  const double a = std::abs(t);
  const int steps = 20000;
  const double h = a / steps;
  double s = pdf(0.0) + pdf(a);
  for (int k = 1; k < steps; ++k) s += pdf(k * h) * (k % 2 ? 4.0 : 2.0);
  const double half = s * h / 3.0;  // P(0 < T < |t|)
  return 1.0 - 2.0 * half;
}

}  // namespace

TEST_CASE("quadrature t oracle reproduces published t-table quantiles") {
  // (df, critical value, two-sided alpha)
  const double table[][3] = {{1, 12.706, 0.05}, {5, 2.571, 0.05}, {10, 2.228, 0.05}, {20, 2.845, 0.01},
                             {30, 1.697, 0.10}, {60, 2.660, 0.01}, {120, 1.980, 0.05}};
  for (const auto& row : table) CHECK(t_two_sided_p(row[1], row[0]) == doctest::Approx(row[2]).epsilon(0.002));
}

TEST_CASE("held-out rank closed forms") {
  Split s;
  s.train_pos = {{0}};
  s.val_item = {1};
  s.test_item = {2};
  const Dataset ds = make_dataset(1, 6, s);
  FactorModel model = init_model(1, 6, 1, 1, 0.0);
  // Scores: the observed and validation items score highest but are not
  // candidates; two unobserved items beat the test item.
  model.item_bias = {9.0, 8.0, 1.0, 2.0, 3.0, 0.5};
  const int ks[] = {1, 2, 50};
  const EvalReport r = evaluate(model, ds, ks);
  CHECK(r.rank[0] == 3);
  CHECK(r.hit_at(1) == 0.0);
  CHECK(r.hit_at(2) == 0.0);
  CHECK(r.hit_at(50) == 1.0);
  CHECK(r.ndcg_at(50) == 0.5);

  model.item_bias = {0.0, 0.0, 5.0, 1.0, 1.0, 1.0};
  const EvalReport top = evaluate(model, ds, ks);
  CHECK(top.rank[0] == 1);
  for (int k : ks) CHECK(top.hit_at(k) == 1.0);
  CHECK(top.ndcg_at(1) == 1.0);
}

TEST_CASE("evaluate equals the brute-force evaluator exactly") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 19));
    const int m = 5 + static_cast<int>(uniform_index(rng, 46));
    const Dataset ds = testutil::random_dataset(n, m, 3, std::min(m, 3 + static_cast<int>(uniform_index(rng, m - 2))),
                                                1000 + trial);
    FactorModel model = init_model(n, m, 3, 2000 + trial, 1.0);
    if (trial % 3 == 0)
      for (auto& x : model.item_factors) x = std::round(x);  // ties
    for (auto& b : model.item_bias) b = std::round(standard_normal(rng));
    const std::vector<int> ks{1, 3, 5, 10, 20};
    const EvalReport r = evaluate(model, ds, ks);
    const auto [hit, ndcg] = testutil::reference_evaluate(model, ds, ks);
    CHECK(r.hit == hit);
    CHECK(r.ndcg == ndcg);
  }
}

TEST_CASE("metric properties") {
  const Dataset ds = testutil::random_dataset(30, 40, 4, 12, 77);
  const FactorModel model = init_model(30, 40, 4, 5, 1.0);
  std::vector<int> ks{1, 5, 10, 20, 40};
  const EvalReport r = evaluate(model, ds, ks);
  for (std::size_t k = 0; k < ks.size(); ++k) {
    CHECK(r.ndcg[k] <= r.hit[k]);
    CHECK(r.hit[k] >= 0.0);
    CHECK(r.hit[k] <= 1.0);
    if (k > 0) {
      CHECK(r.hit[k] >= r.hit[k - 1]);
      CHECK(r.ndcg[k] >= r.ndcg[k - 1]);
    }
  }
  // K at least the candidate count: every user hits.
  CHECK(r.hit_at(40) == 1.0);

  // A monotone transform of the logits (positive scale) leaves metrics unchanged.
  FactorModel scaled = model;
  for (auto& x : scaled.user_factors) x *= 3.0;
  for (auto& b : scaled.item_bias) b *= 3.0;
  const EvalReport r2 = evaluate(scaled, ds, ks);
  CHECK(r2.rank == r.rank);

  // Per-user purity: changing another user's training items leaves u's rank alone.
  Split s{ds.train_pos, ds.val_item, ds.test_item};
  s.train_pos[1].clear();
  const Dataset other = make_dataset(ds.n, ds.m, s);
  const EvalReport r3 = evaluate(model, other, ks);
  for (int u = 0; u < ds.n; ++u)
    if (u != 1) CHECK(r3.rank[u] == r.rank[u]);
}

TEST_CASE("aggregate_runs") {
  EvalReport a, b;
  a.ks = b.ks = {50};
  a.hit = {0.4};
  b.hit = {0.6};
  a.ndcg = {0.1};
  b.ndcg = {0.3};
  a.seed = 1;
  b.seed = 2;
  const std::vector<EvalReport> one{a};
  CHECK(aggregate_runs(one).hit == a.hit);
  const std::vector<EvalReport> two{a, b}, swapped{b, a};
  CHECK(aggregate_runs(two).hit_at(50) == doctest::Approx(0.5));
  CHECK(aggregate_runs(two).hit == aggregate_runs(swapped).hit);
  CHECK(aggregate_runs(two).run_hit.size() == 2);
  CHECK(aggregate_runs(two).seeds == std::vector<std::uint64_t>{1, 2});
  EvalReport c = a;
  c.ks = {100};
  const std::vector<EvalReport> bad{a, c};
  CHECK_THROWS_AS(aggregate_runs(bad), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_runs(std::vector<EvalReport>{}), std::invalid_argument);
}

TEST_CASE("paired t-test degenerate cases") {
  const std::vector<double> a{1, 0, 1, 1, 0};
  const TTestResult same = paired_t_test(a, a);
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);
  std::vector<double> shifted = a;
  for (auto& x : shifted) x += 0.5;
  const TTestResult shift = paired_t_test(shifted, a);
  CHECK(shift.degenerate);
  CHECK(shift.p_value == 0.0);
  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("paired t-test matches the quadrature oracle on random normals") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + static_cast<int>(uniform_index(rng, 60));
    std::vector<double> a(n), b(n);
    const double shift = 0.4 * standard_normal(rng);
    for (int k = 0; k < n; ++k) {
      b[k] = standard_normal(rng);
      a[k] = b[k] + shift + standard_normal(rng);
    }
    const TTestResult r = paired_t_test(a, b);
    CHECK_FALSE(r.degenerate);
    CHECK(r.df == n - 1);
    // The statistic itself from its definition.
    double mean = 0.0, ss = 0.0;
    for (int k = 0; k < n; ++k) mean += a[k] - b[k];
    mean /= n;
    for (int k = 0; k < n; ++k) ss += (a[k] - b[k] - mean) * (a[k] - b[k] - mean);
    CHECK(r.t == doctest::Approx(mean / std::sqrt(ss / (n - 1) / n)));
    CHECK(std::abs(r.p_value - t_two_sided_p(r.t, n - 1)) < 0.01);
  }
}

TEST_CASE("report serialization") {
  const Dataset ds = testutil::random_dataset(6, 20, 4, 8, 3);
  const FactorModel model = init_model(6, 20, 2, 1, 1.0);
  const int ks[] = {5, 10};
  EvalReport r = evaluate(model, ds, ks);
  r.model_name = "m";
  const auto j = to_json(r, true);
  CHECK(j.at("metrics").contains("H@5"));
  CHECK(j.at("metrics").contains("N@10"));
  CHECK(j.at("rank").size() == 6);
  std::ostringstream csv;
  write_csv_rows(csv, r);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.rfind("m,5,H,", 0) == 0);
}
