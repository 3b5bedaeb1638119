#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <utility>
#include <string>
#include <vector>

#include "bd/data.hpp"
#include "bd/model.hpp"
#include "bd/rng.hpp"

namespace testutil {

// Random leave-one-out dataset: every user gets between min_items and
// max_items distinct items, two of them held out.
inline bd::Dataset random_dataset(int n, int m, int min_items, int max_items, std::uint64_t seed) {
  bd::Rng rng(seed);
  bd::Split split;
  split.train_pos.resize(n);
  split.val_item.resize(n);
  split.test_item.resize(n);
  std::vector<int> all(m);
  for (int u = 0; u < n; ++u) {
    for (int i = 0; i < m; ++i) all[i] = i;
    bd::shuffle(std::span<int>(all), rng);
    const int k = min_items + static_cast<int>(bd::uniform_index(rng, max_items - min_items + 1));
    split.test_item[u] = all[0];
    split.val_item[u] = all[1];
    split.train_pos[u].assign(all.begin() + 2, all.begin() + k);
    std::sort(split.train_pos[u].begin(), split.train_pos[u].end());
  }
  return bd::make_dataset(n, m, std::move(split));
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) tv += std::abs(p[k] - q[k]);
  return tv / 2.0;
}

// Norm-wise relative error between the analytic gradient that `loss`
// accumulates and central finite differences with step h over every
// parameter of the model. `loss(model, grad)` returns the loss value.
template <class LossFn>
double gradient_relative_error(bd::FactorModel model, LossFn&& loss, double h = 1e-4) {
  bd::SparseGrad grad(model);
  loss(model, grad);
  std::vector<double> analytic, numeric;
  bd::SparseGrad scratch(model);
  auto probe = [&](std::vector<double>& params, auto analytic_of) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double keep = params[k];
      params[k] = keep + h;
      const double up = loss(model, scratch);
      scratch.clear();
      params[k] = keep - h;
      const double down = loss(model, scratch);
      scratch.clear();
      params[k] = keep;
      numeric.push_back((up - down) / (2.0 * h));
      analytic.push_back(analytic_of(k));
    }
  };
  const auto d = static_cast<std::size_t>(model.d);
  probe(model.user_factors, [&](std::size_t k) { return grad.user_grad(static_cast<int>(k / d))[k % d]; });
  probe(model.item_factors, [&](std::size_t k) { return grad.item_grad(static_cast<int>(k / d))[k % d]; });
  probe(model.item_bias, [&](std::size_t k) { return grad.bias_grad(static_cast<int>(k)); });
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    na += analytic[k] * analytic[k];
    nn += numeric[k] * numeric[k];
  }
  const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  return std::sqrt(diff) / scale;
}

// Reference evaluator: materialize the candidate list, sort it fully and read
// off the position of the held-out item.
inline std::pair<std::vector<double>, std::vector<double>> reference_evaluate(const bd::FactorModel& model,
                                                                              const bd::Dataset& ds,
                                                                              const std::vector<int>& ks) {
  std::vector<double> hit(ks.size(), 0.0), ndcg(ks.size(), 0.0);
  std::vector<std::vector<double>> uh(ks.size(), std::vector<double>(ds.n)), un = uh;
  for (int u = 0; u < ds.n; ++u) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < ds.m; ++j) {
      const bool observed = std::find(ds.train_pos[u].begin(), ds.train_pos[u].end(), j) != ds.train_pos[u].end();
      if (observed || j == ds.val_item[u]) continue;
      double z = model.item_bias[j];
      for (int k = 0; k < model.d; ++k) z += model.user_factors[u * model.d + k] * model.item_factors[j * model.d + k];
      cand.push_back({z, j});
    }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    int rank = 0;
    for (std::size_t p = 0; p < cand.size(); ++p)
      if (cand[p].second == ds.test_item[u]) rank = static_cast<int>(p) + 1;
    for (std::size_t k = 0; k < ks.size(); ++k) {
      uh[k][u] = rank <= ks[k] ? 1.0 : 0.0;
      un[k][u] = rank <= ks[k] ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
    }
  }
  for (std::size_t k = 0; k < ks.size(); ++k) {
    hit[k] = std::accumulate(uh[k].begin(), uh[k].end(), 0.0) / ds.n;
    ndcg[k] = std::accumulate(un[k].begin(), un[k].end(), 0.0) / ds.n;
  }
  return {hit, ndcg};
}

}  // namespace testutil
