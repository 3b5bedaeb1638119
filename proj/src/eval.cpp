#include "bd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace bd {
namespace {

std::size_t k_index(const std::vector<int>& ks, int k) {
  auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw std::out_of_range("K=" + std::to_string(k) + " was not evaluated");
  return static_cast<std::size_t>(it - ks.begin());
}

}  // namespace

double EvalReport::hit_at(int k) const { return hit[k_index(ks, k)]; }
double EvalReport::ndcg_at(int k) const { return ndcg[k_index(ks, k)]; }
const std::vector<double>& EvalReport::user_hit_at(int k) const { return user_hit[k_index(ks, k)]; }
double AggregateReport::hit_at(int k) const { return hit[k_index(ks, k)]; }
double AggregateReport::ndcg_at(int k) const { return ndcg[k_index(ks, k)]; }

int held_out_rank(const FactorModel& model, const Dataset& dataset, int u, HeldOut which,
                  std::span<double> scratch) {
  const int target = which == HeldOut::test ? dataset.test_item[u] : dataset.val_item[u];
  const int other = which == HeldOut::test ? dataset.val_item[u] : dataset.test_item[u];
  score_all(model, u, scratch);
  const double s = scratch[target];
  int rank = 1;
  const auto& pos = dataset.train_pos[u];
  auto it = pos.begin();
  for (int j = 0; j < dataset.m; ++j) {
    while (it != pos.end() && *it < j) ++it;
    if ((it != pos.end() && *it == j) || j == other || j == target) continue;
    if (scratch[j] > s || (scratch[j] == s && j < target)) ++rank;
  }
  return rank;
}

EvalReport evaluate(const FactorModel& model, const Dataset& dataset, std::span<const int> ks,
                    HeldOut which) {
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.seed = model.seed;
  report.ks.assign(ks.begin(), ks.end());
  std::sort(report.ks.begin(), report.ks.end());
  report.ks.erase(std::unique(report.ks.begin(), report.ks.end()), report.ks.end());
  if (report.ks.empty() || report.ks.front() < 1) throw std::invalid_argument("K values must be >= 1");
  const std::size_t nk = report.ks.size();
  report.hit.assign(nk, 0.0);
  report.ndcg.assign(nk, 0.0);
  report.user_hit.assign(nk, std::vector<double>(dataset.n, 0.0));
  report.user_ndcg.assign(nk, std::vector<double>(dataset.n, 0.0));
  report.rank.resize(dataset.n);
  std::vector<double> scratch(dataset.m);
  for (int u = 0; u < dataset.n; ++u) {
    const int r = held_out_rank(model, dataset, u, which, scratch);
    report.rank[u] = r;
    for (std::size_t k = 0; k < nk; ++k) {
      if (r <= report.ks[k]) {
        report.user_hit[k][u] = 1.0;
        report.user_ndcg[k][u] = 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
  }
  for (std::size_t k = 0; k < nk; ++k) {
    report.hit[k] = std::accumulate(report.user_hit[k].begin(), report.user_hit[k].end(), 0.0) / dataset.n;
    report.ndcg[k] = std::accumulate(report.user_ndcg[k].begin(), report.user_ndcg[k].end(), 0.0) / dataset.n;
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

AggregateReport aggregate_runs(std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_runs needs at least one report");
  AggregateReport agg;
  agg.ks = reports.front().ks;
  const std::size_t nk = agg.ks.size();
  agg.hit.assign(nk, 0.0);
  agg.ndcg.assign(nk, 0.0);
  for (const auto& r : reports) {
    if (r.ks != agg.ks) throw std::invalid_argument("cannot aggregate reports with different K lists");
    agg.run_hit.push_back(r.hit);
    agg.run_ndcg.push_back(r.ndcg);
    agg.seeds.push_back(r.seed);
    for (std::size_t k = 0; k < nk; ++k) {
      agg.hit[k] += r.hit[k];
      agg.ndcg[k] += r.ndcg[k];
    }
  }
  for (std::size_t k = 0; k < nk; ++k) {
    agg.hit[k] /= static_cast<double>(reports.size());
    agg.ndcg[k] /= static_cast<double>(reports.size());
  }
  return agg;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) mean += a[k] - b[k];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dev = (a[k] - b[k]) - mean;
    ss += dev * dev;
  }
  TTestResult result;
  result.df = static_cast<int>(n) - 1;
  const double var = ss / static_cast<double>(n - 1);
  if (var == 0.0) {
    result.degenerate = true;
    result.t = 0.0;
    result.p_value = mean == 0.0 ? 1.0 : 0.0;
    return result;
  }
  result.t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(result.df));
  result.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(result.t)));
  return result;
}

nlohmann::json to_json(const EvalReport& report, bool include_per_user) {
  nlohmann::json j;
  j["model"] = report.model_name;
  j["seed"] = report.seed;
  j["runtime_seconds"] = report.runtime_seconds;
  j["ks"] = report.ks;
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t k = 0; k < report.ks.size(); ++k) {
    metrics["H@" + std::to_string(report.ks[k])] = report.hit[k];
    metrics["N@" + std::to_string(report.ks[k])] = report.ndcg[k];
  }
  j["metrics"] = metrics;
  if (include_per_user) j["rank"] = report.rank;
  return j;
}

nlohmann::json to_json(const AggregateReport& report) {
  nlohmann::json j;
  j["ks"] = report.ks;
  j["seeds"] = report.seeds;
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t k = 0; k < report.ks.size(); ++k) {
    std::vector<double> hits, ndcgs;
    for (std::size_t r = 0; r < report.run_hit.size(); ++r) {
      hits.push_back(report.run_hit[r][k]);
      ndcgs.push_back(report.run_ndcg[r][k]);
    }
    metrics["H@" + std::to_string(report.ks[k])] = {{"mean", report.hit[k]}, {"runs", hits}};
    metrics["N@" + std::to_string(report.ks[k])] = {{"mean", report.ndcg[k]}, {"runs", ndcgs}};
  }
  j["metrics"] = metrics;
  return j;
}

void write_csv_rows(std::ostream& out, const EvalReport& report) {
  const auto old_precision = out.precision(17);
  for (std::size_t k = 0; k < report.ks.size(); ++k) {
    out << report.model_name << ',' << report.ks[k] << ",H," << report.seed << ',' << report.hit[k] << '\n';
    out << report.model_name << ',' << report.ks[k] << ",N," << report.seed << ',' << report.ndcg[k] << '\n';
  }
  out.precision(old_precision);
}

}  // namespace bd
