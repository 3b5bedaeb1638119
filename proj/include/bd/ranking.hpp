#pragma once

// Full per-user rankings, periodic rank snapshots and the teacher/student
// rank-difference analytics.

#include <cstdint>
#include <span>
#include <vector>

#include "bd/data.hpp"
#include "bd/model.hpp"

namespace bd {

// Ranks of `items` (aligned with the input) by descending score; rank 1 is
// the highest score and equal scores rank the lower item index first.
std::vector<int> rank_by_score(std::span<const double> scores, std::span<const int> items);

// Ranks `candidates` (aligned with the input) under the model's logits for u.
std::vector<int> full_rank(const FactorModel& model, int u, std::span<const int> candidates);

// Items not in train_pos[u], ascending, optionally without `exclude`.
std::vector<int> candidates_of(const Dataset& dataset, int u, int exclude = -1);

class RankSnapshot {
 public:
  RankSnapshot() = default;
  // `rank_of` is n*m row-major with 0 marking non-candidates. Validates that
  // each user's non-zero ranks are a permutation of 1..count.
  RankSnapshot(int n, int m, std::vector<std::int32_t> rank_of, int epoch_stamp);

  int n() const { return n_; }
  int m() const { return m_; }
  int epoch_stamp() const { return epoch_stamp_; }
  bool is_candidate(int u, int i) const { return rank_of_[index(u, i)] != 0; }
  // 0 for a non-candidate.
  int rank(int u, int i) const { return rank_of_[index(u, i)]; }
  std::span<const std::int32_t> ranks(int u) const {
    return {rank_of_.data() + static_cast<std::size_t>(u) * m_, static_cast<std::size_t>(m_)};
  }
  int candidate_count(int u) const { return counts_[u]; }
  // Candidate items of u ordered by rank (element k has rank k + 1).
  std::vector<int> ordered_items(int u) const;

  friend bool operator==(const RankSnapshot&, const RankSnapshot&) = default;

 private:
  std::size_t index(int u, int i) const { return static_cast<std::size_t>(u) * m_ + i; }

  int n_ = 0;
  int m_ = 0;
  int epoch_stamp_ = 0;
  std::vector<std::int32_t> rank_of_;
  std::vector<int> counts_;
};

// Ranks every user's candidates (all items outside train_pos, held-out items
// included).
RankSnapshot snapshot(const FactorModel& model, const Dataset& dataset, int epoch);

// rank_T - rank_S; positive when the student ranks i higher. Throws
// std::invalid_argument for a non-candidate.
int rank_difference(const RankSnapshot& teacher, const RankSnapshot& student, int u, int i);

// Sum of |rank difference| over the test interactions divided by n*m.
double average_rank_difference(const RankSnapshot& teacher, const RankSnapshot& student,
                               std::span<const Interaction> test);

struct RankDiffRecord {
  int user;
  int item;
  int diff;
  friend bool operator==(const RankDiffRecord&, const RankDiffRecord&) = default;
};

struct ScatterPoint {
  int rank_s;
  int rank_t;
  friend bool operator==(const ScatterPoint&, const ScatterPoint&) = default;
};

struct RankDiffReport {
  std::vector<RankDiffRecord> series;  // non-decreasing in diff
  double student_win_fraction = 0.0;   // share of test interactions with diff > 0
  double average_rank_difference = 0.0;
  std::vector<ScatterPoint> scatter;   // candidates within top_r of either model
};

RankDiffReport rank_diff_report(const RankSnapshot& teacher, const RankSnapshot& student,
                                std::span<const Interaction> test, int top_r = 1000);

}  // namespace bd
