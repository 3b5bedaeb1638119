// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Criteria 6-10 train on ML100K (data/ml-100k.inter, or BD_ML100K) with the
// pinned settings of configs/ml100k.json (or BD_ML100K_CONFIG).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bd/experiment.hpp"
#include "../helpers.hpp"

using namespace bd;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

FactorModel random_model(int n, int m, int d, std::uint64_t seed) {
  FactorModel model = init_model(n, m, d, seed, 0.5);
  Rng rng(seed + 1000);
  for (double& b : model.item_bias) b = 0.3 * standard_normal(rng);
  return model;
}

void gradients() {
  const auto start = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  const int d = 8;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 3));
    const int m = 6 + static_cast<int>(uniform_index(rng, 5));
    const FactorModel model = random_model(n, m, d, 10 + trial);
    const FactorModel target = random_model(n, m, d, 5000 + trial);
    const int u = static_cast<int>(uniform_index(rng, n));
    const double temperature = 1.0 + 9.0 * uniform01(rng);
    const std::vector<int> pos{0, 1};
    const std::vector<int> neg{2, 3, 4};
    const std::vector<int> items{1, 2, 4, 5};
    worst = std::max(worst, testutil::gradient_relative_error(model, [&](const FactorModel& mdl, SparseGrad& g) {
                       return cf_loss_pointwise(mdl, u, pos, neg, g);
                     }));
    worst = std::max(worst, testutil::gradient_relative_error(model, [&](const FactorModel& mdl, SparseGrad& g) {
                       return cf_loss_pairwise(mdl, u, 0, 3, g);
                     }));
    worst = std::max(worst, testutil::gradient_relative_error(model, [&](const FactorModel& mdl, SparseGrad& g) {
                       return bd_loss(mdl, target, u, items, temperature, g);
                     }));
  }
  const double t = seconds_since(start);
  report(1, worst < 1e-4 && t < 10.0, fmt("max relative error %.2e over 100 instances x 3 losses (< 1e-4), %.2f s (< 10 s)", worst, t));
}

std::vector<double> normalized(std::vector<double> w) {
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= s;
  return w;
}

void sampling() {
  const auto start = Clock::now();
  const int m = 100;
  std::vector<std::int32_t> rt(m), rs(m);
  std::iota(rt.begin(), rt.end(), 1);
  std::iota(rs.begin(), rs.end(), 1);
  Rng scramble(17);
  shuffle(std::span<std::int32_t>(rs), scramble);
  const RankSnapshot t(1, m, rt, 0), s(1, m, rs, 0);
  DistillConfig cfg;
  cfg.eps_t = 1e-2;
  cfg.eps_e = 1e-2;
  std::vector<double> tanh_w(m), exp_w(m), uni_w(m, 1.0), aware_w(m);
  for (int i = 0; i < m; ++i) {
    tanh_w[i] = std::tanh(std::max((rs[i] - rt[i]) * cfg.eps_t, 0.0));
    exp_w[i] = std::exp((rt[i] - rs[i]) * cfg.eps_e);
    uni_w[i] = 1.0;
    aware_w[i] = std::exp(-rt[i] * cfg.eps_e);
  }
  auto tv = [&](const SamplingDistribution& dist, const std::vector<double>& w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> f(m, 0.0);
    const int draws = 100000;
    for (int k = 0; k < draws; ++k) f[dist.draw(1, rng).at(0)] += 1.0;
    for (double& x : f) x /= draws;
    return testutil::total_variation(f, normalized(w));
  };
  const double a = tv(make_distribution(Direction::teacher_to_student, t, s, 0, cfg), tanh_w, 1);
  const double b = tv(make_distribution(Direction::student_to_teacher, t, s, 0, cfg), exp_w, 2);
  const double c = tv(make_baseline_distribution(SamplingScheme::uniform, t, 0, cfg), uni_w, 3);
  const double d = tv(make_baseline_distribution(SamplingScheme::rank_aware, t, 0, cfg), aware_w, 4);
  const double worst = std::max({a, b, c, d});
  const double secs = seconds_since(start);
  char buf[256];
  std::snprintf(buf, sizeof buf, "TV tanh %.4f exp %.4f uniform %.4f rank-aware %.4f (< 0.02), %.2f s (< 30 s)", a, b,
                c, d, secs);
  report(2, worst < 0.02 && secs < 30.0, buf);
}

void metric_oracle() {
  Rng rng(77);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 20));
    const int m = 5 + static_cast<int>(uniform_index(rng, 46));
    const int max_items = 3 + static_cast<int>(uniform_index(rng, m - 2));
    const Dataset ds = testutil::random_dataset(n, m, 3, max_items, 300 + trial);
    FactorModel model = init_model(n, m, 4, 700 + trial, 1.0);
    if (trial % 2 == 0)
      for (double& x : model.item_factors) x = std::round(x);
    const std::vector<int> ks{1, 5, 10, 20, 50};
    const EvalReport r = evaluate(model, ds, ks);
    const auto [hit, ndcg] = testutil::reference_evaluate(model, ds, ks);
    if (r.hit != hit || r.ndcg != ndcg) ++mismatches;
  }
  report(3, mismatches == 0, std::to_string(mismatches) + " of 50 instances differ from the brute-force evaluator (exact)");
}

void degenerate_lambda() {
  const Dataset ds = testutil::random_dataset(40, 80, 6, 20, 11);
  TrainConfig c;
  c.epochs = 12;
  c.warmup_epochs = 2;
  c.snapshot_period = 3;
  c.batch_size = 32;
  c.teacher_d = 8;
  c.student_d = 2;
  c.validation_k = 10;
  c.distill.lambda_ts = c.distill.lambda_st = 0.0;
  bool ok = true;
  for (LossKind loss : {LossKind::pointwise, LossKind::pairwise}) {
    c.loss_kind = loss;
    const BdResult bd = train_bd(ds, c);
    ok = ok && bd.teacher == train_cf(ds, c, Role::teacher).model && bd.student == train_cf(ds, c, Role::student).model;
  }
  report(4, ok, ok ? "teacher and student parameters bit-identical to CF-only runs (both losses)"
                   : "parameters differ from CF-only runs");
}

void rank_difference_norm() {
  std::vector<std::int32_t> t(20), s(20);
  for (int u = 0; u < 2; ++u)
    for (int k = 0; k < 10; ++k) t[u * 10 + k] = s[u * 10 + k] = k + 1;
  std::swap(t[0], t[3]);        // user 0, item 0: teacher 4, student 1
  std::swap(s[11], s[12]);      // user 1, item 1: teacher 2, student 3
  const RankSnapshot st(2, 10, t, 0), ss(2, 10, s, 0);
  const std::vector<Interaction> test{{0, 0}, {1, 1}};
  const double same = average_rank_difference(st, st, test);
  const double toy = average_rank_difference(st, ss, test);
  bool bounded = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset ds = testutil::random_dataset(10, 30, 3, 25, 40 + trial);
    const double v = average_rank_difference(snapshot(init_model(10, 30, 3, trial, 2.0), ds, 0),
                                             snapshot(init_model(10, 30, 3, trial + 50, 2.0), ds, 0),
                                             ds.test_interactions());
    bounded = bounded && v >= 0.0 && v < 1.0;
  }
  report(5, same == 0.0 && toy == 0.2 && bounded,
         fmt("identical %g (0), toy %g (== 0.2), random pairs in [0,1): ", same, toy) + (bounded ? "yes" : "no"));
}

// ML100K criteria.

struct Ml100k {
  std::vector<double> bd_teacher, bd_student, teacher, student;
  std::vector<double> ard_warmup, ard_final;
  std::vector<std::vector<double>> scheme_student;  // [scheme][seed]
  FactorModel teacher0, student0;
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

void directional(const std::string& data_path, const std::string& config_path) {
  const auto fail_all = [](const std::string& why) {
    for (int id = 6; id <= 10; ++id) report(id, false, why);
  };
  if (data_path.empty() || !std::filesystem::exists(data_path)) {
    fail_all("dataset missing: " + data_path + " (tools/fetch_ml100k.sh downloads it)");
    return;
  }
  ExperimentSpec spec;
  spec.dataset_path = data_path;
  spec.min_ratings = 10;
  {
    std::ifstream in(config_path);
    if (!in) {
      fail_all("cannot read " + config_path);
      return;
    }
    spec.train = parse_train_config(nlohmann::json::parse(in).at("train"));
  }
  spec.train.teacher_d = 50;
  spec.train.student_d = 5;
  const Dataset ds = load_dataset(spec);
  std::printf("ML100K: n=%d m=%d train=%lld\n", ds.n, ds.m, static_cast<long long>(ds.train_size()));

  const std::vector<SamplingScheme> others{SamplingScheme::uniform, SamplingScheme::swapped_rank_discrepancy,
                                           SamplingScheme::top_n};
  const int seeds = 5;
  const int ks[] = {50};
  const auto test = ds.test_interactions();
  Ml100k r;
  r.scheme_student.resize(others.size());
  double longest = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    TrainConfig cfg = spec.train;
    cfg.seeds = run_seeds(1, seed);
    auto start = Clock::now();
    const BdResult bd = train_bd(ds, cfg);
    longest = std::max(longest, seconds_since(start));
    r.bd_teacher.push_back(evaluate(bd.teacher, ds, ks).hit[0]);
    r.bd_student.push_back(evaluate(bd.student, ds, ks).hit[0]);
    r.ard_warmup.push_back(average_rank_difference(*bd.warmup_teacher_snapshot, *bd.warmup_student_snapshot, test));
    r.ard_final.push_back(average_rank_difference(bd.final_teacher_snapshot, bd.final_student_snapshot, test));

    const CfResult t = train_cf(ds, cfg, Role::teacher);
    const CfResult s = train_cf(ds, cfg, Role::student);
    r.teacher.push_back(evaluate(t.model, ds, ks).hit[0]);
    r.student.push_back(evaluate(s.model, ds, ks).hit[0]);
    if (seed == 0) {
      r.teacher0 = bd.teacher;
      r.student0 = bd.student;
    }
    for (std::size_t k = 0; k < others.size(); ++k) {
      TrainConfig alt = cfg;
      alt.distill.scheme = others[k];
      r.scheme_student[k].push_back(evaluate(train_bd(ds, alt).student, ds, ks).hit[0]);
    }
    std::printf("seed %d: BD T %.4f S %.4f | CF T %.4f S %.4f | uniform %.4f swapped %.4f top-N %.4f | ARD %.4f -> %.4f\n",
                seed, r.bd_teacher.back(), r.bd_student.back(), r.teacher.back(), r.student.back(),
                r.scheme_student[0].back(), r.scheme_student[1].back(), r.scheme_student[2].back(),
                r.ard_warmup.back(), r.ard_final.back());
    std::fflush(stdout);
  }
  const std::string timing = fmt(", longest BD run %.0f s (< 1800 s)", longest);
  const bool fast = longest < 1800.0;

  const double is = improvement(mean(r.bd_student), mean(r.student));
  report(6, is >= 0.02 && fast,
         fmt("BD student H@50 %.4f vs CF student %.4f, Improv.S %+.2f%% (>= 2%%)", mean(r.bd_student), mean(r.student),
             100.0 * is) + timing);
  const double it = improvement(mean(r.bd_teacher), mean(r.teacher));
  report(7, it >= 0.01 && fast,
         fmt("BD teacher H@50 %.4f vs CF teacher %.4f, Improv.T %+.2f%% (>= 1%%)", mean(r.bd_teacher), mean(r.teacher),
             100.0 * it) + timing);

  const double base = mean(r.bd_student);
  bool ordered = true;
  std::string detail = fmt("rank-discrepancy %.4f", base);
  const char* names[] = {"uniform", "swapped", "top-N"};
  for (std::size_t k = 0; k < others.size(); ++k) {
    const double v = mean(r.scheme_student[k]);
    ordered = ordered && base >= v;
    detail += std::string(" vs ") + names[k] + fmt(" %.4f", v);
  }
  report(8, ordered, detail + " (student H@50, 5-seed mean, rank-discrepancy must be >= each)");

  int decreased = 0;
  std::string ards;
  for (int s = 0; s < seeds; ++s) {
    decreased += r.ard_final[s] < r.ard_warmup[s];
    ards += fmt(" %.4f->%.4f", r.ard_warmup[s], r.ard_final[s]);
  }
  report(9, decreased == seeds, std::to_string(decreased) + "/5 seeds decrease from warm-up end to final:" + ards);

  const LatencyStats lt = measure_latency(r.teacher0, ds, 5);
  const LatencyStats ls = measure_latency(r.student0, ds, 5);
  const double ratio = static_cast<double>(ls.parameters) / static_cast<double>(lt.parameters);
  report(10, ratio <= 0.11 && ls.min_seconds < lt.min_seconds,
         fmt("student/teacher parameters %.4f (<= 0.11), full ranking min %.4f s vs teacher %.4f s", ratio,
             ls.min_seconds, lt.min_seconds));
}

}  // namespace

int main() {
  gradients();
  sampling();
  metric_oracle();
  degenerate_lambda();
  rank_difference_norm();
  const char* data = std::getenv("BD_ML100K");
  const char* config = std::getenv("BD_ML100K_CONFIG");
  directional(data ? data : BD_DEFAULT_ML100K, config ? config : BD_DEFAULT_ML100K_CONFIG);
  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
