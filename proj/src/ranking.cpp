#include "bd/ranking.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>

namespace bd {

std::vector<int> rank_by_score(std::span<const double> scores, std::span<const int> items) {
  const std::size_t k = items.size();
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<int> ranks(k);
  for (std::size_t pos = 0; pos < k; ++pos) ranks[order[pos]] = static_cast<int>(pos) + 1;
  return ranks;
}

std::vector<int> full_rank(const FactorModel& model, int u, std::span<const int> candidates) {
  std::vector<double> all(model.m);
  score_all(model, u, all);
  std::vector<double> scores(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) scores[k] = all[candidates[k]];
  return rank_by_score(scores, candidates);
}

std::vector<int> candidates_of(const Dataset& dataset, int u, int exclude) {
  std::vector<int> out;
  out.reserve(dataset.m);
  const auto& pos = dataset.train_pos[u];
  auto it = pos.begin();
  for (int i = 0; i < dataset.m; ++i) {
    while (it != pos.end() && *it < i) ++it;
    if (it != pos.end() && *it == i) continue;
    if (i == exclude) continue;
    out.push_back(i);
  }
  return out;
}

RankSnapshot::RankSnapshot(int n, int m, std::vector<std::int32_t> rank_of, int epoch_stamp)
    : n_(n), m_(m), epoch_stamp_(epoch_stamp), rank_of_(std::move(rank_of)), counts_(n, 0) {
  if (rank_of_.size() != static_cast<std::size_t>(n) * m)
    throw std::invalid_argument("rank array size does not match n*m");
  std::vector<std::uint8_t> seen(m + 1);
  for (int u = 0; u < n; ++u) {
    auto r = ranks(u);
    int count = 0;
    for (auto x : r) count += x != 0;
    std::fill(seen.begin(), seen.end(), 0);
    for (auto x : r) {
      if (x == 0) continue;
      if (x < 0 || x > count || seen[x])
        throw std::invalid_argument("ranks of user " + std::to_string(u) + " are not a permutation of 1.." +
                                    std::to_string(count));
      seen[x] = 1;
    }
    counts_[u] = count;
  }
}

std::vector<int> RankSnapshot::ordered_items(int u) const {
  std::vector<int> out(counts_[u]);
  auto r = ranks(u);
  for (int i = 0; i < m_; ++i)
    if (r[i] != 0) out[r[i] - 1] = i;
  return out;
}

RankSnapshot snapshot(const FactorModel& model, const Dataset& dataset, int epoch) {
  std::vector<std::int32_t> rank_of(static_cast<std::size_t>(dataset.n) * dataset.m, 0);
  std::vector<double> all(dataset.m);
  std::vector<double> scores;
  for (int u = 0; u < dataset.n; ++u) {
    const auto cands = candidates_of(dataset, u);
    score_all(model, u, all);
    scores.resize(cands.size());
    for (std::size_t k = 0; k < cands.size(); ++k) scores[k] = all[cands[k]];
    const auto ranks = rank_by_score(scores, cands);
    auto* row = rank_of.data() + static_cast<std::size_t>(u) * dataset.m;
    for (std::size_t k = 0; k < cands.size(); ++k) row[cands[k]] = ranks[k];
  }
  return RankSnapshot(dataset.n, dataset.m, std::move(rank_of), epoch);
}

int rank_difference(const RankSnapshot& teacher, const RankSnapshot& student, int u, int i) {
  if (!teacher.is_candidate(u, i) || !student.is_candidate(u, i))
    throw std::invalid_argument("item " + std::to_string(i) + " is not a ranking candidate of user " +
                                std::to_string(u));
  return teacher.rank(u, i) - student.rank(u, i);
}

double average_rank_difference(const RankSnapshot& teacher, const RankSnapshot& student,
                               std::span<const Interaction> test) {
  if (teacher.n() != student.n() || teacher.m() != student.m())
    throw std::invalid_argument("snapshots cover different datasets");
  long long total = 0;
  for (const auto& [u, i] : test) total += std::llabs(rank_difference(teacher, student, u, i));
  return static_cast<double>(total) / (static_cast<double>(teacher.n()) * teacher.m());
}

RankDiffReport rank_diff_report(const RankSnapshot& teacher, const RankSnapshot& student,
                                std::span<const Interaction> test, int top_r) {
  RankDiffReport report;
  report.series.reserve(test.size());
  std::size_t wins = 0;
  for (const auto& [u, i] : test) {
    const int diff = rank_difference(teacher, student, u, i);
    report.series.push_back({u, i, diff});
    wins += diff > 0;
  }
  std::stable_sort(report.series.begin(), report.series.end(),
                   [](const RankDiffRecord& a, const RankDiffRecord& b) { return a.diff < b.diff; });
  report.student_win_fraction = test.empty() ? 0.0 : static_cast<double>(wins) / test.size();
  report.average_rank_difference = test.empty() ? 0.0 : average_rank_difference(teacher, student, test);
  for (int u = 0; u < teacher.n(); ++u) {
    auto rt = teacher.ranks(u);
    auto rs = student.ranks(u);
    for (int i = 0; i < teacher.m(); ++i) {
      if (rt[i] == 0 || rs[i] == 0) continue;
      if (rt[i] <= top_r || rs[i] <= top_r) report.scatter.push_back({rs[i], rt[i]});
    }
  }
  return report;
}

}  // namespace bd
