#include "bd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bd/kernels.hpp"
#include "bd/rng.hpp"

namespace bd {

std::string to_string(LossKind kind) {
  return kind == LossKind::pointwise ? "pointwise" : "pairwise";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "pointwise" || name == "point-wise") return LossKind::pointwise;
  if (name == "pairwise" || name == "pair-wise" || name == "bpr") return LossKind::pairwise;
  throw std::invalid_argument("unknown loss kind '" + name + "' (expected pointwise or pairwise)");
}

std::size_t FactorModel::parameter_count() const {
  const auto nn = static_cast<std::size_t>(n);
  const auto mm = static_cast<std::size_t>(m);
  const auto dd = static_cast<std::size_t>(d);
  return nn * dd + mm * dd + (use_item_bias ? mm : 0);
}

bool FactorModel::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(user_factors) && finite(item_factors) && finite(item_bias);
}

FactorModel init_model(int n, int m, int d, std::uint64_t seed, double init_scale, LossKind kind) {
  if (n < 1 || m < 1) throw std::invalid_argument("model needs at least one user and one item");
  if (d < 1) throw std::invalid_argument("embedding dimension must be >= 1");
  if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
  FactorModel model;
  model.n = n;
  model.m = m;
  model.d = d;
  model.loss_kind = kind;
  model.seed = seed;
  model.user_factors.resize(static_cast<std::size_t>(n) * d);
  model.item_factors.resize(static_cast<std::size_t>(m) * d);
  model.item_bias.assign(m, 0.0);
  Rng rng(seed);
  for (double& x : model.user_factors) x = init_scale * standard_normal(rng);
  for (double& x : model.item_factors) x = init_scale * standard_normal(rng);
  return model;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

double logit(const FactorModel& model, int u, int i) {
  const double s = kernels::dot(model.user_row(u).data(), model.item_row(i).data(),
                                static_cast<std::size_t>(model.d));
  return model.use_item_bias ? s + model.item_bias[i] : s;
}

double predict(const FactorModel& model, int u, int i, double temperature) {
  return sigmoid(logit(model, u, i) / temperature);
}

void score_all(const FactorModel& model, int u, std::span<double> out) {
  kernels::score_items(model.user_row(u).data(), model.item_factors.data(),
                       model.use_item_bias ? model.item_bias.data() : nullptr,
                       static_cast<std::size_t>(model.m), static_cast<std::size_t>(model.d), out.data());
}

SparseGrad::SparseGrad(const FactorModel& model)
    : d_(model.d),
      user_(static_cast<std::size_t>(model.n) * model.d, 0.0),
      item_(static_cast<std::size_t>(model.m) * model.d, 0.0),
      bias_(model.m, 0.0),
      user_mark_(model.n, 0),
      item_mark_(model.m, 0) {}

std::span<double> SparseGrad::user(int u) {
  if (!user_mark_[u]) {
    user_mark_[u] = 1;
    touched_users_.push_back(u);
  }
  return {user_.data() + static_cast<std::size_t>(u) * d_, static_cast<std::size_t>(d_)};
}

std::span<double> SparseGrad::item(int i) {
  if (!item_mark_[i]) {
    item_mark_[i] = 1;
    touched_items_.push_back(i);
  }
  return {item_.data() + static_cast<std::size_t>(i) * d_, static_cast<std::size_t>(d_)};
}

double& SparseGrad::bias(int i) {
  item(i);
  return bias_[i];
}

std::span<const double> SparseGrad::user_grad(int u) const {
  return {user_.data() + static_cast<std::size_t>(u) * d_, static_cast<std::size_t>(d_)};
}

std::span<const double> SparseGrad::item_grad(int i) const {
  return {item_.data() + static_cast<std::size_t>(i) * d_, static_cast<std::size_t>(d_)};
}

void SparseGrad::clear() {
  for (int u : touched_users_) {
    std::fill_n(user_.begin() + static_cast<std::ptrdiff_t>(u) * d_, d_, 0.0);
    user_mark_[u] = 0;
  }
  for (int i : touched_items_) {
    std::fill_n(item_.begin() + static_cast<std::ptrdiff_t>(i) * d_, d_, 0.0);
    bias_[i] = 0.0;
    item_mark_[i] = 0;
  }
  touched_users_.clear();
  touched_items_.clear();
}

void accumulate_logit_grad(const FactorModel& model, int u, int i, double dz, SparseGrad& grad) {
  const auto d = static_cast<std::size_t>(model.d);
  kernels::axpy(dz, model.item_row(i).data(), grad.user(u).data(), d);
  kernels::axpy(dz, model.user_row(u).data(), grad.item(i).data(), d);
  if (model.use_item_bias) grad.bias(i) += dz;
}

double cf_loss_pointwise(const FactorModel& model, int u, std::span<const int> pos,
                         std::span<const int> neg, SparseGrad& grad, double weight) {
  double loss = 0.0;
  for (int i : pos) {
    const double p = sigmoid(logit(model, u, i));
    const double pc = clamp_prob(p);
    loss -= std::log(pc);
    if (pc == p) accumulate_logit_grad(model, u, i, weight * (p - 1.0), grad);
  }
  for (int j : neg) {
    const double p = sigmoid(logit(model, u, j));
    const double pc = clamp_prob(p);
    loss -= std::log(1.0 - pc);
    if (pc == p) accumulate_logit_grad(model, u, j, weight * p, grad);
  }
  return weight * loss;
}

double cf_loss_pairwise(const FactorModel& model, int u, int pos_item, int neg_item, SparseGrad& grad,
                        double weight) {
  const double delta = logit(model, u, pos_item) - logit(model, u, neg_item);
  const double s = sigmoid(delta);
  const double sc = clamp_prob(s);
  if (sc == s) {
    const double dz = weight * (s - 1.0);
    accumulate_logit_grad(model, u, pos_item, dz, grad);
    accumulate_logit_grad(model, u, neg_item, -dz, grad);
  }
  return -weight * std::log(sc);
}

OptimizerState::OptimizerState(const FactorModel& model, AdamConfig cfg)
    : config(cfg),
      user_m1(model.user_factors.size(), 0.0),
      user_m2(model.user_factors.size(), 0.0),
      item_m1(model.item_factors.size(), 0.0),
      item_m2(model.item_factors.size(), 0.0),
      bias_m1(model.item_bias.size(), 0.0),
      bias_m2(model.item_bias.size(), 0.0) {}

namespace {

void check_finite(std::span<const double> values, const char* what, int row, std::int64_t step) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      std::ostringstream msg;
      msg << "non-finite " << what << " at row " << row << ", coordinate " << k << " (value "
          << values[k] << ") in optimizer step " << step;
      throw NumericError(msg.str());
    }
  }
}

}  // namespace

void adam_step(FactorModel& model, OptimizerState& opt, SparseGrad& grad) {
  const AdamConfig& cfg = opt.config;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const kernels::AdamCoeffs c{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                              1.0 - std::pow(cfg.beta1, t), 1.0 - std::pow(cfg.beta2, t)};
  const auto d = static_cast<std::size_t>(model.d);

  for (int u : grad.touched_users()) {
    auto g = grad.user(u);
    auto p = model.user_row(u);
    if (cfg.l2 != 0.0) kernels::axpy(cfg.l2, p.data(), g.data(), d);
    check_finite(g, "user-factor gradient", u, opt.step);
    const std::size_t off = static_cast<std::size_t>(u) * d;
    kernels::adam_update(p.data(), opt.user_m1.data() + off, opt.user_m2.data() + off, g.data(), d, c);
    check_finite(p, "user factor", u, opt.step);
  }
  for (int i : grad.touched_items()) {
    auto g = grad.item(i);
    auto p = model.item_row(i);
    if (cfg.l2 != 0.0) kernels::axpy(cfg.l2, p.data(), g.data(), d);
    check_finite(g, "item-factor gradient", i, opt.step);
    const std::size_t off = static_cast<std::size_t>(i) * d;
    kernels::adam_update(p.data(), opt.item_m1.data() + off, opt.item_m2.data() + off, g.data(), d, c);
    check_finite(p, "item factor", i, opt.step);
    if (model.use_item_bias) {
      double& gb = grad.bias(i);
      gb += cfg.l2 * model.item_bias[i];
      check_finite({&gb, 1}, "item-bias gradient", i, opt.step);
      kernels::adam_update(&model.item_bias[i], &opt.bias_m1[i], &opt.bias_m2[i], &gb, 1, c);
      check_finite({&model.item_bias[i], 1}, "item bias", i, opt.step);
    }
  }
  grad.clear();
}

void save_checkpoint(const FactorModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "bd-factor-model";
  j["version"] = 1;
  j["n"] = model.n;
  j["m"] = model.m;
  j["d"] = model.d;
  j["seed"] = model.seed;
  j["loss_kind"] = to_string(model.loss_kind);
  j["use_item_bias"] = model.use_item_bias;
  j["user_factors"] = model.user_factors;
  j["item_factors"] = model.item_factors;
  j["item_bias"] = model.item_bias;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out << j.dump() << '\n';
}

FactorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "bd-factor-model" || j.value("version", 0) != 1)
    throw std::runtime_error("checkpoint '" + path.string() + "' has an unsupported format/version");
  FactorModel model;
  model.n = j.at("n").get<int>();
  model.m = j.at("m").get<int>();
  model.d = j.at("d").get<int>();
  model.seed = j.at("seed").get<std::uint64_t>();
  model.loss_kind = parse_loss_kind(j.at("loss_kind").get<std::string>());
  model.use_item_bias = j.at("use_item_bias").get<bool>();
  model.user_factors = j.at("user_factors").get<std::vector<double>>();
  model.item_factors = j.at("item_factors").get<std::vector<double>>();
  model.item_bias = j.at("item_bias").get<std::vector<double>>();
  if (model.user_factors.size() != static_cast<std::size_t>(model.n) * model.d ||
      model.item_factors.size() != static_cast<std::size_t>(model.m) * model.d ||
      model.item_bias.size() != static_cast<std::size_t>(model.m))
    throw std::runtime_error("checkpoint '" + path.string() + "' has inconsistent array shapes");
  return model;
}

}  // namespace bd
