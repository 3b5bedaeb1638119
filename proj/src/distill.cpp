#include "bd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bd {

std::string to_string(SamplingScheme scheme) {
  switch (scheme) {
    case SamplingScheme::rank_discrepancy: return "rank_discrepancy";
    case SamplingScheme::rank_aware: return "rank_aware";
    case SamplingScheme::top_n: return "top_n";
    case SamplingScheme::uniform: return "uniform";
    case SamplingScheme::swapped_rank_discrepancy: return "swapped_rank_discrepancy";
  }
  return "unknown";
}

SamplingScheme parse_sampling_scheme(const std::string& name) {
  if (name == "rank_discrepancy" || name == "rd") return SamplingScheme::rank_discrepancy;
  if (name == "rank_aware" || name == "cd") return SamplingScheme::rank_aware;
  if (name == "top_n" || name == "topn") return SamplingScheme::top_n;
  if (name == "uniform") return SamplingScheme::uniform;
  if (name == "swapped_rank_discrepancy" || name == "swapped") return SamplingScheme::swapped_rank_discrepancy;
  throw std::invalid_argument("unknown sampling scheme '" + name + "'");
}

std::string to_string(Direction direction) {
  return direction == Direction::teacher_to_student ? "teacher_to_student" : "student_to_teacher";
}

void DistillConfig::validate() const {
  if (!(lambda_ts >= 0.0) || !(lambda_st >= 0.0))
    throw std::invalid_argument("distillation weights must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(eps_t > 0.0) || !(eps_e > 0.0)) throw std::invalid_argument("eps_t and eps_e must be > 0");
  if (samples_per_user < 1) throw std::invalid_argument("samples_per_user must be >= 1");
  if (rank_aware_truncation < 0) throw std::invalid_argument("rank_aware_truncation must be >= 0");
}

double weight_t_to_s(int rank_t, int rank_s, double eps_t) {
  return std::tanh(std::max(static_cast<double>(rank_s - rank_t) * eps_t, 0.0));
}

double weight_s_to_t(int rank_t, int rank_s, double eps_e) {
  return std::exp(static_cast<double>(rank_t - rank_s) * eps_e);
}

namespace {

constexpr double kNoWeight = -std::numeric_limits<double>::infinity();

double log_tanh_weight(double discrepancy, double eps) {
  const double x = discrepancy * eps;
  return x > 0.0 ? std::log(std::tanh(x)) : kNoWeight;
}

}  // namespace

SamplingDistribution::SamplingDistribution(std::vector<int> items, std::vector<double> log_weights) {
  if (items.size() != log_weights.size()) throw std::invalid_argument("items and weights differ in length");
  double max_lw = kNoWeight;
  for (double lw : log_weights) max_lw = std::max(max_lw, lw);
  if (max_lw == kNoWeight) return;
  std::vector<double> w;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (log_weights[k] == kNoWeight) continue;
    items_.push_back(items[k]);
    w.push_back(std::exp(log_weights[k] - max_lw));
  }
  double total = 0.0;
  for (double x : w) total += x;
  const std::size_t K = w.size();
  prob_.resize(K);
  for (std::size_t k = 0; k < K; ++k) prob_[k] = w[k] / total;

  // Vose's alias method.
  alias_prob_.assign(K, 0.0);
  alias_.assign(K, 0);
  std::vector<double> scaled(K);
  std::vector<int> small, large;
  for (std::size_t k = 0; k < K; ++k) {
    scaled[k] = prob_[k] * static_cast<double>(K);
    (scaled[k] < 1.0 ? small : large).push_back(static_cast<int>(k));
  }
  while (!small.empty() && !large.empty()) {
    const int s = small.back();
    small.pop_back();
    const int l = large.back();
    alias_prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (int l : large) alias_prob_[l] = 1.0;
  for (int s : small) alias_prob_[s] = 1.0;
}

SamplingDistribution SamplingDistribution::fixed(std::vector<int> items) {
  SamplingDistribution dist;
  const std::size_t K = items.size();
  dist.items_ = std::move(items);
  dist.prob_.assign(K, K ? 1.0 / static_cast<double>(K) : 0.0);
  dist.fixed_ = true;
  return dist;
}

std::vector<int> SamplingDistribution::draw(int count, Rng& rng) const {
  const std::size_t K = items_.size();
  const std::size_t want = static_cast<std::size_t>(std::max(count, 0));
  if (fixed_ || K <= want) return {items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(std::min(K, want))};

  std::vector<int> chosen;  // positions into items_
  chosen.reserve(want);
  const auto taken = [&](int k) { return std::find(chosen.begin(), chosen.end(), k) != chosen.end(); };
  std::size_t attempts = 0;
  const std::size_t max_attempts = 64 + 32 * want;
  while (chosen.size() < want && attempts < max_attempts) {
    ++attempts;
    const int k = static_cast<int>(uniform_index(rng, K));
    const int pick = uniform01(rng) < alias_prob_[k] ? k : alias_[k];
    if (!taken(pick)) chosen.push_back(pick);
  }
  // A few items holding almost all the mass: finish with exact successive
  // sampling over what remains.
  while (chosen.size() < want) {
    double remaining = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      if (!taken(static_cast<int>(k))) remaining += prob_[k];
    double target = uniform01(rng) * remaining;
    int pick = -1;
    for (std::size_t k = 0; k < K; ++k) {
      if (taken(static_cast<int>(k))) continue;
      pick = static_cast<int>(k);
      target -= prob_[k];
      if (target < 0.0) break;
    }
    chosen.push_back(pick);
  }
  std::vector<int> out;
  out.reserve(want);
  for (int k : chosen) out.push_back(items_[k]);
  return out;
}

SamplingDistribution make_baseline_distribution(SamplingScheme scheme, const RankSnapshot& teaching, int u,
                                                const DistillConfig& config) {
  auto order = teaching.ordered_items(u);
  switch (scheme) {
    case SamplingScheme::top_n: {
      order.resize(std::min<std::size_t>(order.size(), config.samples_per_user));
      return SamplingDistribution::fixed(std::move(order));
    }
    case SamplingScheme::uniform:
      return SamplingDistribution(order, std::vector<double>(order.size(), 0.0));
    case SamplingScheme::rank_aware: {
      std::vector<double> lw(order.size());
      for (std::size_t k = 0; k < order.size(); ++k) {
        const int rank = static_cast<int>(k) + 1;
        const bool kept = config.rank_aware_truncation == 0 || rank <= config.rank_aware_truncation;
        lw[k] = kept ? -static_cast<double>(rank) * config.eps_e : kNoWeight;
      }
      return SamplingDistribution(std::move(order), std::move(lw));
    }
    default:
      throw std::invalid_argument("scheme '" + to_string(scheme) + "' needs both snapshots");
  }
}

SamplingDistribution make_distribution(Direction direction, const RankSnapshot& teacher,
                                       const RankSnapshot& student, int u, const DistillConfig& config) {
  const bool to_student = direction == Direction::teacher_to_student;
  const RankSnapshot& teaching = to_student ? teacher : student;
  const SamplingScheme scheme = config.scheme;
  if (scheme != SamplingScheme::rank_discrepancy && scheme != SamplingScheme::swapped_rank_discrepancy)
    return make_baseline_distribution(scheme, teaching, u, config);

  // The discrepancy is always oriented towards the teaching model: positive
  // when the teaching model ranks the item higher than the learner.
  // The swapped scheme exchanges the tanh and exp shapes between directions.
  const bool use_tanh = to_student == (scheme == SamplingScheme::rank_discrepancy);
  auto order = teaching.ordered_items(u);
  std::vector<double> lw(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int i = order[k];
    const int rt = teacher.rank(u, i);
    const int rs = student.rank(u, i);
    if (rt == 0 || rs == 0) throw std::invalid_argument("snapshots disagree on candidate sets");
    const double discrepancy = to_student ? static_cast<double>(rs - rt) : static_cast<double>(rt - rs);
    lw[k] = use_tanh ? log_tanh_weight(discrepancy, config.eps_t) : discrepancy * config.eps_e;
  }
  return SamplingDistribution(std::move(order), std::move(lw));
}

std::vector<int> sample_items(Direction direction, const RankSnapshot& teacher, const RankSnapshot& student,
                              int u, int count, const DistillConfig& config, Rng& rng) {
  return make_distribution(direction, teacher, student, u, config).draw(count, rng);
}

std::vector<int> sample_items_baseline(SamplingScheme scheme, const RankSnapshot& teaching, int u, int count,
                                       const DistillConfig& config, Rng& rng) {
  DistillConfig c = config;
  c.samples_per_user = count;
  return make_baseline_distribution(scheme, teaching, u, c).draw(count, rng);
}

DistillSampler::DistillSampler(Direction direction, std::shared_ptr<const RankSnapshot> teacher,
                               std::shared_ptr<const RankSnapshot> student, DistillConfig config)
    : direction_(direction), teacher_(std::move(teacher)), student_(std::move(student)), config_(config) {
  if (!teacher_) throw std::invalid_argument("sampler needs a teaching snapshot");
  cache_.resize(teacher_->n());
}

const SamplingDistribution& DistillSampler::distribution(int u) {
  auto& slot = cache_[u];
  if (!slot) {
    slot = student_ ? make_distribution(direction_, *teacher_, *student_, u, config_)
                    : make_baseline_distribution(config_.scheme, *teacher_, u, config_);
  }
  return *slot;
}

double bd_loss(const FactorModel& learner, const FactorModel& target, int u, std::span<const int> items,
               double temperature, SparseGrad& grad, double weight) {
  double loss = 0.0;
  for (int j : items) {
    const double p = sigmoid(logit(learner, u, j) / temperature);
    const double q = clamp_prob(sigmoid(logit(target, u, j) / temperature));
    const double pc = clamp_prob(p);
    loss -= q * std::log(pc) + (1.0 - q) * std::log(1.0 - pc);
    if (pc == p) accumulate_logit_grad(learner, u, j, weight * (p - q) / temperature, grad);
  }
  return weight * loss;
}

}  // namespace bd
