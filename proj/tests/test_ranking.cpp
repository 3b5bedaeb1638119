#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "bd/ranking.hpp"
#include "helpers.hpp"

using namespace bd;

namespace {

// Rank of candidate c = 1 + number of candidates that beat it in a pairwise
// comparison (higher score, or equal score and lower index).
std::vector<int> comparison_ranks(const std::vector<double>& scores, const std::vector<int>& items) {
  std::vector<int> ranks(items.size(), 1);
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = 0; b < items.size(); ++b) {
      const double sa = scores[items[a]], sb = scores[items[b]];
      if (sb > sa || (sb == sa && items[b] < items[a])) ++ranks[a];
    }
  return ranks;
}

// Snapshot over m items for one-user datasets, ranks given directly.
RankSnapshot snapshot_of(int n, int m, const std::vector<std::vector<std::int32_t>>& ranks, int epoch = 0) {
  std::vector<std::int32_t> flat;
  for (const auto& r : ranks) flat.insert(flat.end(), r.begin(), r.end());
  return RankSnapshot(n, m, flat, epoch);
}

}  // namespace

TEST_CASE("rank_by_score: descending with index tie-break") {
  const std::vector<double> scores{0.9, 0.1, 0.5};
  const std::vector<int> items{0, 1, 2};
  CHECK(rank_by_score(scores, items) == std::vector<int>{1, 3, 2});
  const std::vector<double> flat(5, 0.25);
  const std::vector<int> all{0, 1, 2, 3, 4};
  CHECK(rank_by_score(flat, all) == std::vector<int>{1, 2, 3, 4, 5});
}

TEST_CASE("full_rank agrees with the pairwise comparison oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    FactorModel model = init_model(2, 40, 3, 100 + trial, 1.0);
    // Coarse values force ties.
    for (auto& x : model.item_factors) x = std::round(x * 2.0) / 2.0;
    for (auto& x : model.user_factors) x = std::round(x);
    std::vector<int> cand;
    for (int i = 0; i < 40; ++i)
      if (uniform01(rng) < 0.7) cand.push_back(i);
    if (cand.empty()) cand.push_back(0);
    std::vector<double> scores(40);
    score_all(model, 1, scores);
    const auto ranks = full_rank(model, 1, cand);
    CHECK(ranks == comparison_ranks(scores, cand));
    auto sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(cand.size());
    std::iota(expect.begin(), expect.end(), 1);
    CHECK(sorted == expect);
  }
}

TEST_CASE("full_rank ignores a per-user constant shift") {
  FactorModel model = init_model(1, 30, 4, 12, 1.0);
  std::vector<int> cand(30);
  std::iota(cand.begin(), cand.end(), 0);
  const auto before = full_rank(model, 0, cand);
  // Adding c to every item bias is a per-user constant for this single user.
  for (auto& b : model.item_bias) b += 3.0;
  CHECK(full_rank(model, 0, cand) == before);
}

TEST_CASE("snapshot candidates, stamps and purity") {
  Split s;
  s.train_pos = {{1}, {}};
  s.val_item = {0, 0};
  s.test_item = {2, 1};
  const Dataset ds = make_dataset(2, 3, s);
  const FactorModel model = init_model(2, 3, 2, 5, 1.0);
  const RankSnapshot snap = snapshot(model, ds, 7);
  CHECK(snap.epoch_stamp() == 7);
  CHECK_FALSE(snap.is_candidate(0, 1));
  CHECK(snap.is_candidate(0, 0));
  CHECK(snap.is_candidate(0, 2));
  CHECK(snap.candidate_count(0) == 2);
  CHECK(snap.candidate_count(1) == 3);
  CHECK(snapshot(model, ds, 7) == snap);
  const auto order = snap.ordered_items(1);
  for (std::size_t k = 0; k < order.size(); ++k) CHECK(snap.rank(1, order[k]) == static_cast<int>(k) + 1);
}

TEST_CASE("RankSnapshot rejects ranks that are not a permutation") {
  CHECK_THROWS_AS(snapshot_of(1, 3, {{1, 1, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(snapshot_of(1, 3, {{1, 3, 0}}), std::invalid_argument);
  CHECK_NOTHROW(snapshot_of(1, 3, {{2, 0, 1}}));
}

TEST_CASE("rank_difference sign and errors") {
  std::vector<std::int32_t> t(100), s(100);
  std::iota(t.begin(), t.end(), 1);
  std::iota(s.begin(), s.end(), 1);
  std::swap(s[0], s[99]);  // item 99: teacher rank 100, student rank 1
  const auto snap_t = snapshot_of(1, 100, {t});
  const auto snap_s = snapshot_of(1, 100, {s});
  CHECK(rank_difference(snap_t, snap_s, 0, 99) == 99);
  CHECK(rank_difference(snap_s, snap_t, 0, 99) == -99);
  CHECK(rank_difference(snap_t, snap_t, 0, 42) == 0);
  const auto with_hole = snapshot_of(1, 3, {{1, 0, 2}});
  CHECK_THROWS_AS(rank_difference(with_hole, with_hole, 0, 1), std::invalid_argument);
}

TEST_CASE("average rank difference hand example") {
  // n=2, m=10; test item 0 of user 0 has diff +3, test item 1 of user 1 diff -1.
  std::vector<std::int32_t> base(10);
  std::iota(base.begin(), base.end(), 1);
  auto t0 = base, s0 = base, t1 = base, s1 = base;
  std::swap(t0[0], t0[3]);  // teacher rank of item 0 is 4
  // student rank of item 0 stays 1: diff = 4 - 1 = 3
  std::swap(s1[1], s1[2]);  // student rank of item 1 is 3, teacher 2: diff -1
  const auto snap_t = snapshot_of(2, 10, {t0, t1});
  const auto snap_s = snapshot_of(2, 10, {s0, s1});
  const std::vector<Interaction> test{{0, 0}, {1, 1}};
  CHECK(rank_difference(snap_t, snap_s, 0, 0) == 3);
  CHECK(rank_difference(snap_t, snap_s, 1, 1) == -1);
  CHECK(average_rank_difference(snap_t, snap_s, test) == 0.2);
  CHECK(average_rank_difference(snap_s, snap_t, test) == 0.2);
  CHECK(average_rank_difference(snap_t, snap_t, test) == 0.0);

  const auto report = rank_diff_report(snap_t, snap_s, test);
  CHECK(report.student_win_fraction == 0.5);
  REQUIRE(report.series.size() == 2);
  CHECK(report.series[0].diff == -1);
  CHECK(report.series[1].diff == 3);
  CHECK(rank_diff_report(snap_t, snap_t, test).student_win_fraction == 0.0);
}

TEST_CASE("rank analytics properties on random models") {
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset ds = testutil::random_dataset(15, 40, 3, 20, 60 + trial);
    const FactorModel a = init_model(15, 40, 4, trial, 1.0);
    const FactorModel b = init_model(15, 40, 2, trial + 100, 1.0);
    const auto sa = snapshot(a, ds, 0), sb = snapshot(b, ds, 0);
    const auto test = ds.test_interactions();
    const double ard = average_rank_difference(sa, sb, test);
    CHECK(ard >= 0.0);
    CHECK(ard < 1.0);
    CHECK(ard == average_rank_difference(sb, sa, test));
    const auto report = rank_diff_report(sa, sb, test, 10);
    CHECK(report.series.size() == test.size());
    CHECK(std::is_sorted(report.series.begin(), report.series.end(),
                         [](const auto& x, const auto& y) { return x.diff < y.diff; }));
    for (const auto& r : report.series) CHECK(std::abs(r.diff) < ds.m);
    for (const auto& p : report.scatter) CHECK((p.rank_s <= 10 || p.rank_t <= 10));
    CHECK(report.average_rank_difference == ard);
  }
}
