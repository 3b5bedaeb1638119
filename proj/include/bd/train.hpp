#pragma once

// Joint teacher/student training under bidirectional distillation, plus the
// collaborative-filtering-only and unidirectional (frozen teacher) variants
// used as baselines.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "bd/data.hpp"
#include "bd/distill.hpp"
#include "bd/model.hpp"
#include "bd/ranking.hpp"
#include "bd/rng.hpp"

namespace bd {

struct TrainSeeds {
  std::uint64_t teacher_init = 1;
  std::uint64_t student_init = 2;
  std::uint64_t sampling = 3;
  std::uint64_t negatives = 4;  // also drives the per-epoch shuffle
};

struct TrainConfig {
  int epochs = 60;            // total, warm-up included
  int warmup_epochs = 5;
  int snapshot_period = 10;   // epochs between rank snapshot rebuilds
  int batch_size = 128;
  double lr_teacher = 1e-3;
  double lr_student = 1e-3;
  double l2 = 1e-4;
  int cf_negatives = 1;
  LossKind loss_kind = LossKind::pairwise;
  int teacher_d = 50;
  int student_d = 5;
  double init_scale = 0.01;
  bool item_bias = true;
  int validation_k = 50;
  // Use the distillation draws as the CF negatives of the same step instead of
  // separate uniform draws.
  bool distill_items_as_negatives = false;
  // Report the best-validation epoch instead of the last one.
  bool select_best_epoch = true;
  DistillConfig distill;
  TrainSeeds seeds;

  void validate() const;
};

enum class Role { teacher, student };

struct EpochRecord {
  int epoch = 0;
  bool warmup = false;
  bool snapshot_rebuilt = false;
  int snapshot_epoch = -1;  // epoch stamp of the snapshots used, -1 when none
  double cf_loss_teacher = 0.0;
  double cf_loss_student = 0.0;
  double bd_loss_student_to_teacher = 0.0;
  double bd_loss_teacher_to_student = 0.0;
  long long bd_items_student_to_teacher = 0;
  long long bd_items_teacher_to_student = 0;
  double val_hit_teacher = 0.0;
  double val_ndcg_teacher = 0.0;
  double val_hit_student = 0.0;
  double val_ndcg_student = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<int> snapshot_epochs;
  int best_epoch_teacher = -1;
  int best_epoch_student = -1;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// k distinct items outside train_pos[u], uniformly, by rejection.
std::vector<int> sample_cf_negatives(const Dataset& dataset, int u, int k, Rng& rng);

// One model with its optimizer, gradient buffer and negative-sampling stream.
struct Learner {
  FactorModel model;
  OptimizerState opt;
  SparseGrad grad;
  Rng negatives;

  Learner(FactorModel model, AdamConfig adam, std::uint64_t negative_seed);
};

Learner make_learner(const Dataset& dataset, const TrainConfig& config, Role role);

struct BatchStats {
  double cf_loss = 0.0;
  double bd_loss = 0.0;
  long long bd_items = 0;
};

// Distillation inputs for one direction; `target` supplies constant soft
// labels, `sampler` picks the items.
struct DistillTerm {
  const FactorModel* target = nullptr;
  DistillSampler* sampler = nullptr;
  Rng* rng = nullptr;
  double lambda = 0.0;
  double temperature = 1.0;
};

// Accumulates CF (+ weighted distillation) gradients of every interaction in
// the batch and takes one Adam step.
BatchStats train_on_batch(Learner& learner, const Dataset& dataset, std::span<const Interaction> batch,
                          const TrainConfig& config, const DistillTerm* distill);

struct BdResult {
  FactorModel teacher;
  FactorModel student;
  TrainLog log;
  // Snapshots built when distillation starts (end of warm-up) and of the
  // reported models after training.
  std::optional<RankSnapshot> warmup_teacher_snapshot;
  std::optional<RankSnapshot> warmup_student_snapshot;
  RankSnapshot final_teacher_snapshot;
  RankSnapshot final_student_snapshot;
};

struct CfResult {
  FactorModel model;
  TrainLog log;
};

BdResult train_bd(const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});

// CF-only training of one role, with the same seed streams train_bd uses for
// that role.
CfResult train_cf(const Dataset& dataset, const TrainConfig& config, Role role,
                  const EpochCallback& on_epoch = {});

// Student trained with CF + lambda_ts * distillation from a frozen teacher;
// items come from `scheme` over the teacher's (fixed) ranking, or over both
// rankings for the rank-discrepancy schemes.
CfResult train_baseline_kd(const Dataset& dataset, const TrainConfig& config, const FactorModel& frozen_teacher,
                           SamplingScheme scheme, const EpochCallback& on_epoch = {});

nlohmann::json to_json(const EpochRecord& record);

}  // namespace bd
