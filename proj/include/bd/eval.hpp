#pragma once

// Leave-one-out full-ranking evaluation (H@K, N@K), run aggregation and the
// paired t-test.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bd/data.hpp"
#include "bd/model.hpp"

namespace bd {

enum class HeldOut { test, validation };

struct EvalReport {
  std::string model_name;
  std::uint64_t seed = 0;
  double runtime_seconds = 0.0;
  std::vector<int> ks;                          // ascending
  std::vector<double> hit;                      // mean H@K, aligned with ks
  std::vector<double> ndcg;                     // mean N@K, aligned with ks
  std::vector<int> rank;                        // per-user rank of the held-out item
  std::vector<std::vector<double>> user_hit;    // [k][u]
  std::vector<std::vector<double>> user_ndcg;   // [k][u]

  double hit_at(int k) const;
  double ndcg_at(int k) const;
  const std::vector<double>& user_hit_at(int k) const;
};

// Rank of the held-out item among all items outside train_pos[u], with the
// other held-out item removed from the candidates. Ties rank the lower item
// index first.
int held_out_rank(const FactorModel& model, const Dataset& dataset, int u, HeldOut which,
                  std::span<double> scratch);

// H@K = [rank <= K], N@K = [rank <= K] / log2(rank + 1), averaged over users.
EvalReport evaluate(const FactorModel& model, const Dataset& dataset, std::span<const int> ks,
                    HeldOut which = HeldOut::test);

struct AggregateReport {
  std::vector<int> ks;
  std::vector<double> hit;    // mean over runs
  std::vector<double> ndcg;
  std::vector<std::vector<double>> run_hit;   // [run][k]
  std::vector<std::vector<double>> run_ndcg;
  std::vector<std::uint64_t> seeds;

  double hit_at(int k) const;
  double ndcg_at(int k) const;
};

AggregateReport aggregate_runs(std::span<const EvalReport> reports);

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  int df = 0;
  // Zero variance of the differences: the statistic is undefined. p_value is
  // 1 when the samples coincide and 0 for a constant non-zero shift.
  bool degenerate = false;
};

// Two-sided paired t-test.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

nlohmann::json to_json(const EvalReport& report, bool include_per_user = false);
nlohmann::json to_json(const AggregateReport& report);
// Rows "model,k,metric,seed,value".
void write_csv_rows(std::ostream& out, const EvalReport& report);

}  // namespace bd
