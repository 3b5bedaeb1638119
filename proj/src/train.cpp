#include "bd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bd/eval.hpp"

namespace bd {
namespace {

constexpr std::uint64_t kTeacherNegStream = 0;
constexpr std::uint64_t kStudentNegStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kStudentToTeacherStream = 0;
constexpr std::uint64_t kTeacherToStudentStream = 1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Best-validation bookkeeping for one model.
struct Selection {
  FactorModel best;
  double hit = -1.0;
  double ndcg = -1.0;
  int epoch = -1;

  void offer(const FactorModel& model, double h, double nd, int epoch_index) {
    if (h > hit || (h == hit && nd > ndcg)) {
      best = model;
      hit = h;
      ndcg = nd;
      epoch = epoch_index;
    }
  }
};

std::pair<double, double> validate_model(const FactorModel& model, const Dataset& dataset, int k) {
  const int ks[] = {k};
  const EvalReport r = evaluate(model, dataset, ks, HeldOut::validation);
  return {r.hit[0], r.ndcg[0]};
}

void check_loss(double loss, const char* who, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "training diverged: non-finite " << who << " loss at epoch " << epoch << ", batch " << batch;
    throw NumericError(msg.str());
  }
}

template <class Fn>
auto with_context(int epoch, std::size_t batch, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    std::ostringstream msg;
    msg << e.what() << " (epoch " << epoch << ", batch " << batch << ")";
    throw NumericError(msg.str());
  }
}

bool needs_both_snapshots(SamplingScheme scheme) {
  return scheme == SamplingScheme::rank_discrepancy || scheme == SamplingScheme::swapped_rank_discrepancy;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw std::invalid_argument("warmup_epochs must be in [0, epochs)");
  if (snapshot_period < 1) throw std::invalid_argument("snapshot_period must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr_teacher > 0.0) || !(lr_student > 0.0)) throw std::invalid_argument("learning rates must be > 0");
  if (!(l2 >= 0.0)) throw std::invalid_argument("l2 must be >= 0");
  if (cf_negatives < 1) throw std::invalid_argument("cf_negatives must be >= 1");
  if (teacher_d < 1 || student_d < 1) throw std::invalid_argument("embedding dimensions must be >= 1");
  if (student_d > teacher_d) throw std::invalid_argument("student_d must not exceed teacher_d");
  if (validation_k < 1) throw std::invalid_argument("validation_k must be >= 1");
  distill.validate();
}

std::vector<int> sample_cf_negatives(const Dataset& dataset, int u, int k, Rng& rng) {
  const int available = dataset.m - static_cast<int>(dataset.train_pos[u].size());
  if (k > available)
    throw std::invalid_argument("user " + std::to_string(u) + " has only " + std::to_string(available) +
                                " unobserved items, cannot draw " + std::to_string(k));
  std::vector<int> out;
  out.reserve(k);
  while (static_cast<int>(out.size()) < k) {
    const int j = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(dataset.m)));
    if (dataset.is_train_positive(u, j)) continue;
    if (std::find(out.begin(), out.end(), j) != out.end()) continue;
    out.push_back(j);
  }
  return out;
}

Learner::Learner(FactorModel m, AdamConfig adam, std::uint64_t negative_seed)
    : model(std::move(m)), opt(model, adam), grad(model), negatives(negative_seed) {}

Learner make_learner(const Dataset& dataset, const TrainConfig& config, Role role) {
  const bool teacher = role == Role::teacher;
  FactorModel model = init_model(dataset.n, dataset.m, teacher ? config.teacher_d : config.student_d,
                                 teacher ? config.seeds.teacher_init : config.seeds.student_init,
                                 config.init_scale, config.loss_kind);
  model.use_item_bias = config.item_bias;
  AdamConfig adam;
  adam.lr = teacher ? config.lr_teacher : config.lr_student;
  adam.l2 = config.l2;
  return Learner(std::move(model), adam,
                 derive_seed(config.seeds.negatives, teacher ? kTeacherNegStream : kStudentNegStream));
}

BatchStats train_on_batch(Learner& learner, const Dataset& dataset, std::span<const Interaction> batch,
                          const TrainConfig& config, const DistillTerm* distill) {
  BatchStats stats;
  const bool distilling = distill != nullptr && distill->lambda > 0.0 && distill->target != nullptr;
  std::vector<int> negatives;
  std::vector<int> items;
  for (const auto& [u, i] : batch) {
    items.clear();
    if (distilling) items = distill->sampler->draw(u, *distill->rng);
    if (config.distill_items_as_negatives && !items.empty())
      negatives = items;
    else
      negatives = sample_cf_negatives(dataset, u, config.cf_negatives, learner.negatives);

    if (learner.model.loss_kind == LossKind::pointwise) {
      const int pos[] = {i};
      stats.cf_loss += cf_loss_pointwise(learner.model, u, pos, negatives, learner.grad);
    } else {
      for (int j : negatives) stats.cf_loss += cf_loss_pairwise(learner.model, u, i, j, learner.grad);
    }
    if (!items.empty()) {
      stats.bd_loss += bd_loss(learner.model, *distill->target, u, items, distill->temperature, learner.grad,
                               distill->lambda);
      stats.bd_items += static_cast<long long>(items.size());
    }
  }
  adam_step(learner.model, learner.opt, learner.grad);
  return stats;
}

BdResult train_bd(const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  Learner teacher = make_learner(dataset, config, Role::teacher);
  Learner student = make_learner(dataset, config, Role::student);
  Rng shuffle_rng(derive_seed(config.seeds.negatives, kShuffleStream));
  Rng st_rng(derive_seed(config.seeds.sampling, kStudentToTeacherStream));
  Rng ts_rng(derive_seed(config.seeds.sampling, kTeacherToStudentStream));
  const DistillConfig& dc = config.distill;
  const bool any_distill = dc.lambda_ts > 0.0 || dc.lambda_st > 0.0;

  BdResult result;
  Selection best_teacher, best_student;
  std::shared_ptr<const RankSnapshot> snap_teacher, snap_student;
  std::optional<DistillSampler> sampler_st, sampler_ts;

  auto interactions = dataset.train_interactions();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.warmup = epoch < config.warmup_epochs;
    shuffle(std::span<Interaction>(interactions), shuffle_rng);

    const bool distill_now = any_distill && !rec.warmup;
    if (distill_now && (epoch - config.warmup_epochs) % config.snapshot_period == 0) {
      snap_teacher = std::make_shared<const RankSnapshot>(snapshot(teacher.model, dataset, epoch));
      snap_student = std::make_shared<const RankSnapshot>(snapshot(student.model, dataset, epoch));
      sampler_st.emplace(Direction::student_to_teacher, snap_teacher, snap_student, dc);
      sampler_ts.emplace(Direction::teacher_to_student, snap_teacher, snap_student, dc);
      if (!result.warmup_teacher_snapshot) {
        result.warmup_teacher_snapshot = *snap_teacher;
        result.warmup_student_snapshot = *snap_student;
      }
      rec.snapshot_rebuilt = true;
      result.log.snapshot_epochs.push_back(epoch);
    }
    if (distill_now) rec.snapshot_epoch = snap_teacher->epoch_stamp();

    for (std::size_t b = 0, batch_index = 0; b < interactions.size(); b += bs, ++batch_index) {
      const std::span<const Interaction> batch(interactions.data() + b, std::min(bs, interactions.size() - b));
      DistillTerm to_teacher{&student.model, distill_now ? &*sampler_st : nullptr, &st_rng, dc.lambda_st,
                             dc.temperature};
      DistillTerm to_student{&teacher.model, distill_now ? &*sampler_ts : nullptr, &ts_rng, dc.lambda_ts,
                             dc.temperature};
      const BatchStats t = with_context(epoch, batch_index, [&] {
        return train_on_batch(teacher, dataset, batch, config, distill_now ? &to_teacher : nullptr);
      });
      const BatchStats s = with_context(epoch, batch_index, [&] {
        return train_on_batch(student, dataset, batch, config, distill_now ? &to_student : nullptr);
      });
      check_loss(t.cf_loss + t.bd_loss, "teacher", epoch, batch_index);
      check_loss(s.cf_loss + s.bd_loss, "student", epoch, batch_index);
      rec.cf_loss_teacher += t.cf_loss;
      rec.cf_loss_student += s.cf_loss;
      rec.bd_loss_student_to_teacher += t.bd_loss;
      rec.bd_loss_teacher_to_student += s.bd_loss;
      rec.bd_items_student_to_teacher += t.bd_items;
      rec.bd_items_teacher_to_student += s.bd_items;
    }

    std::tie(rec.val_hit_teacher, rec.val_ndcg_teacher) = validate_model(teacher.model, dataset, config.validation_k);
    std::tie(rec.val_hit_student, rec.val_ndcg_student) = validate_model(student.model, dataset, config.validation_k);
    best_teacher.offer(teacher.model, rec.val_hit_teacher, rec.val_ndcg_teacher, epoch);
    best_student.offer(student.model, rec.val_hit_student, rec.val_ndcg_student, epoch);
    rec.seconds = seconds_since(start);
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.log.best_epoch_teacher = best_teacher.epoch;
  result.log.best_epoch_student = best_student.epoch;
  result.teacher = config.select_best_epoch ? std::move(best_teacher.best) : std::move(teacher.model);
  result.student = config.select_best_epoch ? std::move(best_student.best) : std::move(student.model);
  result.final_teacher_snapshot = snapshot(result.teacher, dataset, config.epochs);
  result.final_student_snapshot = snapshot(result.student, dataset, config.epochs);
  return result;
}

CfResult train_cf(const Dataset& dataset, const TrainConfig& config, Role role, const EpochCallback& on_epoch) {
  config.validate();
  Learner learner = make_learner(dataset, config, role);
  Rng shuffle_rng(derive_seed(config.seeds.negatives, kShuffleStream));
  const bool teacher = role == Role::teacher;

  CfResult result;
  Selection best;
  auto interactions = dataset.train_interactions();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.warmup = epoch < config.warmup_epochs;
    shuffle(std::span<Interaction>(interactions), shuffle_rng);
    for (std::size_t b = 0, batch_index = 0; b < interactions.size(); b += bs, ++batch_index) {
      const std::span<const Interaction> batch(interactions.data() + b, std::min(bs, interactions.size() - b));
      const BatchStats st = with_context(epoch, batch_index,
                                         [&] { return train_on_batch(learner, dataset, batch, config, nullptr); });
      check_loss(st.cf_loss, teacher ? "teacher" : "student", epoch, batch_index);
      (teacher ? rec.cf_loss_teacher : rec.cf_loss_student) += st.cf_loss;
    }
    const auto [h, nd] = validate_model(learner.model, dataset, config.validation_k);
    (teacher ? rec.val_hit_teacher : rec.val_hit_student) = h;
    (teacher ? rec.val_ndcg_teacher : rec.val_ndcg_student) = nd;
    best.offer(learner.model, h, nd, epoch);
    rec.seconds = seconds_since(start);
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  (teacher ? result.log.best_epoch_teacher : result.log.best_epoch_student) = best.epoch;
  result.model = config.select_best_epoch ? std::move(best.best) : std::move(learner.model);
  return result;
}

CfResult train_baseline_kd(const Dataset& dataset, const TrainConfig& config, const FactorModel& frozen_teacher,
                           SamplingScheme scheme, const EpochCallback& on_epoch) {
  config.validate();
  if (frozen_teacher.n != dataset.n || frozen_teacher.m != dataset.m)
    throw std::invalid_argument("frozen teacher was trained on a different dataset indexing");
  Learner student = make_learner(dataset, config, Role::student);
  Rng shuffle_rng(derive_seed(config.seeds.negatives, kShuffleStream));
  Rng ts_rng(derive_seed(config.seeds.sampling, kTeacherToStudentStream));
  DistillConfig dc = config.distill;
  dc.scheme = scheme;
  const bool both = needs_both_snapshots(scheme);
  const auto teacher_snap = std::make_shared<const RankSnapshot>(snapshot(frozen_teacher, dataset, 0));
  std::optional<DistillSampler> sampler;
  std::shared_ptr<const RankSnapshot> student_snap;

  CfResult result;
  Selection best;
  auto interactions = dataset.train_interactions();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.warmup = epoch < config.warmup_epochs;
    shuffle(std::span<Interaction>(interactions), shuffle_rng);
    const bool distill_now = dc.lambda_ts > 0.0 && !rec.warmup;
    if (distill_now && (epoch - config.warmup_epochs) % config.snapshot_period == 0) {
      if (both) {
        student_snap = std::make_shared<const RankSnapshot>(snapshot(student.model, dataset, epoch));
        sampler.emplace(Direction::teacher_to_student, teacher_snap, student_snap, dc);
      } else if (!sampler) {
        sampler.emplace(Direction::teacher_to_student, teacher_snap, nullptr, dc);
      }
      rec.snapshot_rebuilt = true;
      result.log.snapshot_epochs.push_back(epoch);
    }
    if (distill_now) rec.snapshot_epoch = result.log.snapshot_epochs.back();
    for (std::size_t b = 0, batch_index = 0; b < interactions.size(); b += bs, ++batch_index) {
      const std::span<const Interaction> batch(interactions.data() + b, std::min(bs, interactions.size() - b));
      DistillTerm term{&frozen_teacher, distill_now ? &*sampler : nullptr, &ts_rng, dc.lambda_ts, dc.temperature};
      const BatchStats st = with_context(epoch, batch_index, [&] {
        return train_on_batch(student, dataset, batch, config, distill_now ? &term : nullptr);
      });
      check_loss(st.cf_loss + st.bd_loss, "student", epoch, batch_index);
      rec.cf_loss_student += st.cf_loss;
      rec.bd_loss_teacher_to_student += st.bd_loss;
      rec.bd_items_teacher_to_student += st.bd_items;
    }
    std::tie(rec.val_hit_student, rec.val_ndcg_student) = validate_model(student.model, dataset, config.validation_k);
    best.offer(student.model, rec.val_hit_student, rec.val_ndcg_student, epoch);
    rec.seconds = seconds_since(start);
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.log.best_epoch_student = best.epoch;
  result.model = config.select_best_epoch ? std::move(best.best) : std::move(student.model);
  return result;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"warmup", r.warmup},
          {"snapshot_rebuilt", r.snapshot_rebuilt},
          {"snapshot_epoch", r.snapshot_epoch},
          {"cf_loss_teacher", r.cf_loss_teacher},
          {"cf_loss_student", r.cf_loss_student},
          {"bd_loss_student_to_teacher", r.bd_loss_student_to_teacher},
          {"bd_loss_teacher_to_student", r.bd_loss_teacher_to_student},
          {"bd_items_student_to_teacher", r.bd_items_student_to_teacher},
          {"bd_items_teacher_to_student", r.bd_items_teacher_to_student},
          {"val_hit_teacher", r.val_hit_teacher},
          {"val_ndcg_teacher", r.val_ndcg_teacher},
          {"val_hit_student", r.val_hit_student},
          {"val_ndcg_student", r.val_ndcg_student},
          {"seconds", r.seconds}};
}

}  // namespace bd
