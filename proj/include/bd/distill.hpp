#pragma once

// Bidirectional distillation: the binary distillation loss and the item
// sampling schemes deciding which unobserved items carry knowledge in each
// direction.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bd/model.hpp"
#include "bd/ranking.hpp"
#include "bd/rng.hpp"

namespace bd {

enum class SamplingScheme { rank_discrepancy, rank_aware, top_n, uniform, swapped_rank_discrepancy };
enum class Direction { teacher_to_student, student_to_teacher };

std::string to_string(SamplingScheme scheme);
SamplingScheme parse_sampling_scheme(const std::string& name);
std::string to_string(Direction direction);

struct DistillConfig {
  double lambda_ts = 0.5;  // weight of the teacher -> student term
  double lambda_st = 0.5;  // weight of the student -> teacher term
  double temperature = 2.0;
  double eps_t = 1e-2;
  double eps_e = 1e-3;
  int samples_per_user = 10;
  SamplingScheme scheme = SamplingScheme::rank_discrepancy;
  // Rank-aware sampling only considers the teaching model's top ranks up to
  // this value; 0 means the full list.
  int rank_aware_truncation = 0;

  void validate() const;
};

// tanh(max((rank_S - rank_T) * eps_t, 0))
double weight_t_to_s(int rank_t, int rank_s, double eps_t);
// exp((rank_T - rank_S) * eps_e)
double weight_s_to_t(int rank_t, int rank_s, double eps_e);

// Normalized distribution over the positive-weight candidates of one user.
// Entries are enumerated in the teaching model's rank order so that draws
// depend on ranks only, never on item labels.
class SamplingDistribution {
 public:
  SamplingDistribution() = default;
  // `log_weights` aligned with `items`; -infinity marks a zero weight.
  SamplingDistribution(std::vector<int> items, std::vector<double> log_weights);
  // Fixed selection (top-N): every draw returns exactly `items`.
  static SamplingDistribution fixed(std::vector<int> items);

  const std::vector<int>& items() const { return items_; }
  const std::vector<double>& probabilities() const { return prob_; }
  bool is_fixed() const { return fixed_; }
  bool empty() const { return items_.empty(); }

  // `count` distinct items drawn without replacement with probability
  // proportional to weight. Returns every positive-weight item when there are
  // no more than `count` of them.
  std::vector<int> draw(int count, Rng& rng) const;

 private:
  std::vector<int> items_;
  std::vector<double> prob_;
  std::vector<double> alias_prob_;
  std::vector<int> alias_;
  bool fixed_ = false;
};

// Distribution used by `direction` under config.scheme. The teaching model is
// the teacher for T->S and the student for S->T.
SamplingDistribution make_distribution(Direction direction, const RankSnapshot& teacher,
                                       const RankSnapshot& student, int u, const DistillConfig& config);

// Distribution of a scheme that looks only at the teaching model's ranking
// (rank-aware, top-N, uniform).
SamplingDistribution make_baseline_distribution(SamplingScheme scheme, const RankSnapshot& teaching, int u,
                                                const DistillConfig& config);

std::vector<int> sample_items(Direction direction, const RankSnapshot& teacher, const RankSnapshot& student,
                              int u, int count, const DistillConfig& config, Rng& rng);

std::vector<int> sample_items_baseline(SamplingScheme scheme, const RankSnapshot& teaching, int u, int count,
                                       const DistillConfig& config, Rng& rng);

// Per-user distributions for one direction, built lazily from a fixed pair of
// snapshots. `student` may be null for schemes that only need the teaching
// model (then `teacher` is the teaching snapshot).
class DistillSampler {
 public:
  DistillSampler(Direction direction, std::shared_ptr<const RankSnapshot> teacher,
                 std::shared_ptr<const RankSnapshot> student, DistillConfig config);

  const SamplingDistribution& distribution(int u);
  std::vector<int> draw(int u, Rng& rng) { return distribution(u).draw(config_.samples_per_user, rng); }
  int snapshot_epoch() const { return teacher_->epoch_stamp(); }

 private:
  Direction direction_;
  std::shared_ptr<const RankSnapshot> teacher_;
  std::shared_ptr<const RankSnapshot> student_;
  DistillConfig config_;
  std::vector<std::optional<SamplingDistribution>> cache_;
};

// Sum over `items` of -(q log p + (1-q) log(1-p)) with p = sigmoid(z_learner/T)
// and q = sigmoid(z_target/T). The target is a constant: only the learner's
// rows receive weight * gradient.
double bd_loss(const FactorModel& learner, const FactorModel& target, int u, std::span<const int> items,
               double temperature, SparseGrad& grad, double weight = 1.0);

}  // namespace bd
