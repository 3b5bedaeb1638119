#pragma once

// Matrix-factorization recommenders with an item bias, their collaborative
// filtering losses, and a sparse (touched-rows-only) Adam optimizer.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bd {

// Probabilities entering a log are clamped to [kProbClip, 1 - kProbClip].
inline constexpr double kProbClip = 1e-7;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { pointwise, pairwise };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct FactorModel {
  int n = 0;
  int m = 0;
  int d = 0;
  LossKind loss_kind = LossKind::pairwise;
  bool use_item_bias = true;
  std::uint64_t seed = 0;
  std::vector<double> user_factors;  // n x d, row-major
  std::vector<double> item_factors;  // m x d, row-major
  std::vector<double> item_bias;     // m

  std::span<double> user_row(int u) { return {user_factors.data() + static_cast<std::size_t>(u) * d, static_cast<std::size_t>(d)}; }
  std::span<const double> user_row(int u) const { return {user_factors.data() + static_cast<std::size_t>(u) * d, static_cast<std::size_t>(d)}; }
  std::span<double> item_row(int i) { return {item_factors.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)}; }
  std::span<const double> item_row(int i) const { return {item_factors.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)}; }

  // n*d + m*d (+ m with the item bias).
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const FactorModel&, const FactorModel&) = default;
};

// Factors ~ Normal(0, init_scale^2), biases zero.
FactorModel init_model(int n, int m, int d, std::uint64_t seed, double init_scale = 0.01,
                       LossKind kind = LossKind::pairwise);

double sigmoid(double z);
double clamp_prob(double p);

// P[u] . Q[i] + b[i]
double logit(const FactorModel& model, int u, int i);
// sigmoid(logit / temperature)
double predict(const FactorModel& model, int u, int i, double temperature = 1.0);
// Logits of every item for user u into `out` (size m).
void score_all(const FactorModel& model, int u, std::span<double> out);

// Gradient accumulator congruent with a FactorModel. Rows are materialized on
// first touch and remembered so that clearing and the optimizer step only
// visit touched rows.
class SparseGrad {
 public:
  SparseGrad() = default;
  explicit SparseGrad(const FactorModel& model);

  std::span<double> user(int u);
  std::span<double> item(int i);
  double& bias(int i);

  std::span<const double> user_grad(int u) const;
  std::span<const double> item_grad(int i) const;
  double bias_grad(int i) const { return bias_[i]; }

  const std::vector<int>& touched_users() const { return touched_users_; }
  const std::vector<int>& touched_items() const { return touched_items_; }
  bool empty() const { return touched_users_.empty() && touched_items_.empty(); }
  int dim() const { return d_; }
  void clear();

 private:
  int d_ = 0;
  std::vector<double> user_;
  std::vector<double> item_;
  std::vector<double> bias_;
  std::vector<std::uint8_t> user_mark_;
  std::vector<std::uint8_t> item_mark_;
  std::vector<int> touched_users_;
  std::vector<int> touched_items_;
};

// Adds dloss/dlogit(u,i) = `dz` through to the touched parameter rows.
void accumulate_logit_grad(const FactorModel& model, int u, int i, double dz, SparseGrad& grad);

// Binary cross-entropy of sigmoid(logit) against label 1 for `pos` and 0 for
// `neg`. Returns weight * loss and accumulates weight * gradient.
double cf_loss_pointwise(const FactorModel& model, int u, std::span<const int> pos,
                         std::span<const int> neg, SparseGrad& grad, double weight = 1.0);

// -log sigmoid(z_ui - z_uj) for one (observed, unobserved) pair.
double cf_loss_pairwise(const FactorModel& model, int u, int pos_item, int neg_item, SparseGrad& grad,
                        double weight = 1.0);

struct AdamConfig {
  double lr = 1e-3;
  double l2 = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<double> user_m1, user_m2;
  std::vector<double> item_m1, item_m2;
  std::vector<double> bias_m1, bias_m2;

  OptimizerState() = default;
  OptimizerState(const FactorModel& model, AdamConfig config);
};

// One Adam step over the rows touched in `grad`, with L2 folded into the
// gradient of those rows only. Clears `grad`. Throws NumericError on a
// non-finite gradient or parameter.
void adam_step(FactorModel& model, OptimizerState& opt, SparseGrad& grad);

void save_checkpoint(const FactorModel& model, const std::filesystem::path& path);
FactorModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bd
