#include "bd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace bd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string header_name(HeaderMode h) {
  switch (h) {
    case HeaderMode::present: return "present";
    case HeaderMode::absent: return "absent";
    default: return "auto";
  }
}

HeaderMode parse_header(const std::string& s) {
  if (s == "auto") return HeaderMode::automatic;
  if (s == "present") return HeaderMode::present;
  if (s == "absent") return HeaderMode::absent;
  throw std::invalid_argument("unknown header mode '" + s + "'");
}

std::string delimiter_name(char d) {
  if (d == '\0') return "auto";
  if (d == '\t') return "tab";
  return std::string(1, d);
}

char parse_delimiter(const std::string& s) {
  if (s == "auto") return '\0';
  if (s == "tab" || s == "\t") return '\t';
  if (s.size() == 1) return s[0];
  throw std::invalid_argument("delimiter must be 'auto', 'tab' or one character");
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

// Every key must be one the reader knows; typos otherwise go unnoticed.
void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

// One trained model of one run, kept for evaluation and comparisons.
struct Trained {
  std::string name;
  FactorModel model;
};

class RunWriter {
 public:
  RunWriter(fs::path dir, std::ostream& log) : dir_(std::move(dir)), log_(log) {
    fs::create_directories(dir_ / "checkpoints");
    fs::create_directories(dir_ / "eval");
    fs::create_directories(dir_ / "logs");
    csv_.open(dir_ / "metrics.csv");
    csv_ << "model,k,metric,seed,value\n";
  }

  const fs::path& dir() const { return dir_; }

  EpochCallback epoch_logger(const std::string& model, int run) {
    auto out = std::make_shared<std::ofstream>(dir_ / "logs" / (model + "_run" + std::to_string(run) + ".jsonl"));
    return [out, model, run, &log = log_](const EpochRecord& r) {
      json j = to_json(r);
      j["run"] = run;
      j["model"] = model;
      *out << j.dump() << "\n";
      out->flush();
      log << model << " run " << run << " epoch " << r.epoch << (r.warmup ? " (warm-up)" : "") << " val H "
          << fmt("%.4f", r.val_hit_teacher) << "/" << fmt("%.4f", r.val_hit_student) << " "
          << fmt("%.1fs", r.seconds) << "\n";
    };
  }

  void record(const Trained& t, const Dataset& ds, const std::vector<int>& ks, int run, std::uint64_t seed) {
    save_checkpoint(t.model, dir_ / "checkpoints" / (t.name + "_run" + std::to_string(run) + ".json"));
    EvalReport r = evaluate(t.model, ds, ks);
    r.model_name = t.name;
    r.seed = seed;
    write_json(dir_ / "eval" / (t.name + "_run" + std::to_string(run) + ".json"), to_json(r, true));
    write_csv_rows(csv_, r);
    csv_.flush();
    log_ << t.name << " run " << run;
    for (std::size_t k = 0; k < r.ks.size(); ++k)
      log_ << " H@" << r.ks[k] << " " << fmt("%.4f", r.hit[k]) << " N@" << r.ks[k] << " " << fmt("%.4f", r.ndcg[k]);
    log_ << "\n";
    reports_[t.name].push_back(std::move(r));
  }

  const std::map<std::string, std::vector<EvalReport>>& reports() const { return reports_; }

 private:
  fs::path dir_;
  std::ostream& log_;
  std::ofstream csv_;
  std::map<std::string, std::vector<EvalReport>> reports_;
};

json improvement_row(const AggregateReport& now, const AggregateReport& before) {
  json row = json::object();
  for (std::size_t k = 0; k < now.ks.size(); ++k) {
    const std::string ks = std::to_string(now.ks[k]);
    row["H@" + ks] = improvement(now.hit[k], before.hit_at(now.ks[k]));
    row["N@" + ks] = improvement(now.ndcg[k], before.ndcg_at(now.ks[k]));
  }
  return row;
}

std::string percent(double v) { return fmt("%.2f%%", 100.0 * v); }

json summarize(const RunWriter& w, const std::vector<int>& ks, std::string& table) {
  json summary;
  std::map<std::string, AggregateReport> agg;
  for (const auto& [name, reports] : w.reports()) {
    agg[name] = aggregate_runs(reports);
    summary["models"][name] = to_json(agg[name]);
  }

  std::ostringstream md;
  md << "| model |";
  for (int k : ks) md << " H@" << k << " | N@" << k << " |";
  md << "\n|---|";
  for (std::size_t k = 0; k < ks.size(); ++k) md << "---|---|";
  md << "\n";
  for (const auto& [name, a] : agg) {
    md << "| " << name << " |";
    for (std::size_t k = 0; k < ks.size(); ++k) md << " " << fmt("%.4f", a.hit[k]) << " | " << fmt("%.4f", a.ndcg[k]) << " |";
    md << "\n";
  }

  auto add_row = [&](const std::string& label, const std::string& now, const std::string& before) {
    if (!agg.count(now) || !agg.count(before)) return;
    json row = improvement_row(agg.at(now), agg.at(before));
    row["new"] = now;
    row["old"] = before;
    summary["improvements"][label] = row;
    md << "| " << label << " |";
    for (int k : ks) {
      const std::string s = std::to_string(k);
      md << " " << percent(row["H@" + s]) << " | " << percent(row["N@" + s]) << " |";
    }
    md << "\n";
  };
  add_row("Improv.T", "bd_teacher", "teacher");
  // Best competitor by the first K's hit ratio.
  std::string best;
  for (const auto& [name, a] : agg) {
    if (name.rfind("kd_", 0) != 0) continue;
    if (best.empty() || a.hit[0] > agg.at(best).hit[0]) best = name;
  }
  if (!best.empty()) add_row("Improv.B", "bd_student", best);
  add_row("Improv.S", "bd_student", "student");

  if (!best.empty() && agg.count("bd_student")) {
    const auto& a = w.reports().at("bd_student").back();
    const auto& b = w.reports().at(best).back();
    for (int k : ks) {
      const TTestResult t = paired_t_test(a.user_hit_at(k), b.user_hit_at(k));
      summary["t_test"]["H@" + std::to_string(k)] = {
          {"against", best}, {"t", t.t}, {"p_value", t.p_value}, {"df", t.df}, {"degenerate", t.degenerate}};
    }
  }
  table = md.str();
  return summary;
}

void run_bd(const ExperimentSpec& spec, const Dataset& ds, RunWriter& w, json& summary, std::ostream& log) {
  json ard = json::array();
  for (int r = 0; r < spec.runs; ++r) {
    TrainConfig cfg = spec.train;
    cfg.seeds = run_seeds(spec.seed, r);
    BdResult res = train_bd(ds, cfg, w.epoch_logger("bd", r));
    w.record({"bd_teacher", res.teacher}, ds, spec.ks, r, cfg.seeds.teacher_init);
    w.record({"bd_student", res.student}, ds, spec.ks, r, cfg.seeds.student_init);

    const auto test = ds.test_interactions();
    json entry = {{"run", r}, {"best_epoch_teacher", res.log.best_epoch_teacher},
                  {"best_epoch_student", res.log.best_epoch_student}};
    if (res.warmup_teacher_snapshot)
      entry["warmup_end"] = average_rank_difference(*res.warmup_teacher_snapshot, *res.warmup_student_snapshot, test);
    entry["final"] = average_rank_difference(res.final_teacher_snapshot, res.final_student_snapshot, test);
    ard.push_back(entry);
    if (r == 0) {
      Analytics a;
      a.report = rank_diff_report(res.final_teacher_snapshot, res.final_student_snapshot, test);
      a.teacher_name = "bd_teacher";
      a.student_name = "bd_student";
      emit_plots(a, w.dir() / "analytics");
    }

    if (spec.compare_cf || !spec.baselines.empty()) {
      CfResult teacher = train_cf(ds, cfg, Role::teacher, w.epoch_logger("teacher", r));
      if (spec.compare_cf) {
        w.record({"teacher", teacher.model}, ds, spec.ks, r, cfg.seeds.teacher_init);
        CfResult student = train_cf(ds, cfg, Role::student, w.epoch_logger("student", r));
        w.record({"student", student.model}, ds, spec.ks, r, cfg.seeds.student_init);
        if (r == 0) {
          Analytics a;
          a.report = rank_diff_report(snapshot(teacher.model, ds, cfg.epochs), snapshot(student.model, ds, cfg.epochs),
                                      test);
          emit_plots(a, w.dir() / "analytics_cf");
        }
      }
      for (SamplingScheme scheme : spec.baselines) {
        const std::string name = "kd_" + to_string(scheme);
        CfResult kd = train_baseline_kd(ds, cfg, teacher.model, scheme, w.epoch_logger(name, r));
        w.record({name, kd.model}, ds, spec.ks, r, cfg.seeds.student_init);
      }
    }
    log << "run " << r << " done\n";
  }
  summary["average_rank_difference"] = ard;
}

void run_cf(const ExperimentSpec& spec, const Dataset& ds, RunWriter& w) {
  for (int r = 0; r < spec.runs; ++r) {
    TrainConfig cfg = spec.train;
    cfg.seeds = run_seeds(spec.seed, r);
    CfResult teacher = train_cf(ds, cfg, Role::teacher, w.epoch_logger("teacher", r));
    w.record({"teacher", teacher.model}, ds, spec.ks, r, cfg.seeds.teacher_init);
    CfResult student = train_cf(ds, cfg, Role::student, w.epoch_logger("student", r));
    w.record({"student", student.model}, ds, spec.ks, r, cfg.seeds.student_init);
  }
}

void run_kd(const ExperimentSpec& spec, const Dataset& ds, RunWriter& w) {
  std::optional<FactorModel> fixed;
  if (!spec.teacher_checkpoint.empty()) fixed = load_checkpoint(spec.teacher_checkpoint);
  const std::string name = "kd_" + to_string(spec.kd_scheme);
  for (int r = 0; r < spec.runs; ++r) {
    TrainConfig cfg = spec.train;
    cfg.seeds = run_seeds(spec.seed, r);
    FactorModel teacher = fixed ? *fixed : train_cf(ds, cfg, Role::teacher, w.epoch_logger("teacher", r)).model;
    w.record({"teacher", teacher}, ds, spec.ks, r, cfg.seeds.teacher_init);
    CfResult kd = train_baseline_kd(ds, cfg, teacher, spec.kd_scheme, w.epoch_logger(name, r));
    w.record({name, kd.model}, ds, spec.ks, r, cfg.seeds.student_init);
  }
}

json run_analyze(const ExperimentSpec& spec, const Dataset& ds, const fs::path& dir) {
  const FactorModel t = load_checkpoint(spec.teacher_checkpoint);
  const FactorModel s = load_checkpoint(spec.student_checkpoint);
  Analytics a;
  a.report = rank_diff_report(snapshot(t, ds, 0), snapshot(s, ds, 0), ds.test_interactions(), spec.top_r);
  emit_plots(a, dir);
  json j = {{"teacher_checkpoint", spec.teacher_checkpoint},
            {"student_checkpoint", spec.student_checkpoint},
            {"test_interactions", a.report.series.size()},
            {"average_rank_difference", a.report.average_rank_difference},
            {"student_win_fraction", a.report.student_win_fraction},
            {"scatter_points", a.report.scatter.size()},
            {"top_r", spec.top_r}};
  write_json(dir / "summary.json", j);
  return j;
}

json run_latency(const ExperimentSpec& spec, const Dataset& ds, std::ostream& log) {
  json rows = json::array();
  for (const auto& path : spec.checkpoints) {
    const FactorModel model = load_checkpoint(path);
    LatencyStats st = measure_latency(model, ds, spec.repetitions, spec.top_k);
    st.name = fs::path(path).stem().string();
    log << st.name << " params " << st.parameters << " min " << fmt("%.4fs", st.min_seconds) << " mean "
        << fmt("%.4fs", st.mean_seconds) << "\n";
    rows.push_back(to_json(st));
  }
  return rows;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::bd: return "bd";
    case Mode::baseline_kd: return "baseline-kd";
    case Mode::cf_only: return "cf-only";
    case Mode::analyze: return "analyze";
    case Mode::latency: return "latency";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::bd, Mode::baseline_kd, Mode::cf_only, Mode::analyze, Mode::latency})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown mode '" + name + "'");
}

void ExperimentSpec::validate() const {
  if (dataset_path.empty()) throw std::invalid_argument("dataset path is required");
  if (min_ratings < 3) throw std::invalid_argument("min_ratings must be >= 3 for the leave-one-out split");
  if (ks.empty()) throw std::invalid_argument("at least one K is required");
  for (int k : ks)
    if (k < 1) throw std::invalid_argument("K values must be >= 1");
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (output_dir.empty()) throw std::invalid_argument("output_dir is required");
  switch (mode) {
    case Mode::bd:
    case Mode::cf_only:
    case Mode::baseline_kd:
      train.validate();
      break;
    case Mode::analyze:
      if (teacher_checkpoint.empty() || student_checkpoint.empty())
        throw std::invalid_argument("analyze needs teacher_checkpoint and student_checkpoint");
      if (top_r < 1) throw std::invalid_argument("top_r must be >= 1");
      break;
    case Mode::latency:
      if (checkpoints.empty()) throw std::invalid_argument("latency needs at least one checkpoint");
      if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
      if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
      break;
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"snapshot_period", c.snapshot_period},
          {"batch_size", c.batch_size},
          {"lr_teacher", c.lr_teacher},
          {"lr_student", c.lr_student},
          {"l2", c.l2},
          {"cf_negatives", c.cf_negatives},
          {"loss", to_string(c.loss_kind)},
          {"teacher_d", c.teacher_d},
          {"student_d", c.student_d},
          {"init_scale", c.init_scale},
          {"item_bias", c.item_bias},
          {"validation_k", c.validation_k},
          {"distill_items_as_negatives", c.distill_items_as_negatives},
          {"select_best_epoch", c.select_best_epoch},
          {"distill",
           {{"lambda_ts", c.distill.lambda_ts},
            {"lambda_st", c.distill.lambda_st},
            {"temperature", c.distill.temperature},
            {"eps_t", c.distill.eps_t},
            {"eps_e", c.distill.eps_e},
            {"samples_per_user", c.distill.samples_per_user},
            {"scheme", to_string(c.distill.scheme)},
            {"rank_aware_truncation", c.distill.rank_aware_truncation}}},
          {"seeds",
           {{"teacher_init", c.seeds.teacher_init},
            {"student_init", c.seeds.student_init},
            {"sampling", c.seeds.sampling},
            {"negatives", c.seeds.negatives}}}};
}

TrainConfig parse_train_config(const json& j, TrainConfig c) {
  check_keys(j,
             {"epochs", "warmup_epochs", "snapshot_period", "batch_size", "lr_teacher", "lr_student", "l2",
              "cf_negatives", "loss", "teacher_d", "student_d", "init_scale", "item_bias", "validation_k",
              "distill_items_as_negatives", "select_best_epoch", "distill", "seeds"},
             "train");
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "warmup_epochs", c.warmup_epochs);
  read_opt(j, "snapshot_period", c.snapshot_period);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "lr_teacher", c.lr_teacher);
  read_opt(j, "lr_student", c.lr_student);
  read_opt(j, "l2", c.l2);
  read_opt(j, "cf_negatives", c.cf_negatives);
  if (j.contains("loss")) c.loss_kind = parse_loss_kind(j.at("loss").get<std::string>());
  read_opt(j, "teacher_d", c.teacher_d);
  read_opt(j, "student_d", c.student_d);
  read_opt(j, "init_scale", c.init_scale);
  read_opt(j, "item_bias", c.item_bias);
  read_opt(j, "validation_k", c.validation_k);
  read_opt(j, "distill_items_as_negatives", c.distill_items_as_negatives);
  read_opt(j, "select_best_epoch", c.select_best_epoch);
  if (j.contains("distill")) {
    const json& d = j.at("distill");
    check_keys(d,
               {"lambda_ts", "lambda_st", "temperature", "eps_t", "eps_e", "samples_per_user", "scheme",
                "rank_aware_truncation"},
               "train.distill");
    read_opt(d, "lambda_ts", c.distill.lambda_ts);
    read_opt(d, "lambda_st", c.distill.lambda_st);
    read_opt(d, "temperature", c.distill.temperature);
    read_opt(d, "eps_t", c.distill.eps_t);
    read_opt(d, "eps_e", c.distill.eps_e);
    read_opt(d, "samples_per_user", c.distill.samples_per_user);
    if (d.contains("scheme")) c.distill.scheme = parse_sampling_scheme(d.at("scheme").get<std::string>());
    read_opt(d, "rank_aware_truncation", c.distill.rank_aware_truncation);
  }
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    check_keys(s, {"teacher_init", "student_init", "sampling", "negatives"}, "train.seeds");
    read_opt(s, "teacher_init", c.seeds.teacher_init);
    read_opt(s, "student_init", c.seeds.student_init);
    read_opt(s, "sampling", c.seeds.sampling);
    read_opt(s, "negatives", c.seeds.negatives);
  }
  return c;
}

ExperimentSpec parse_spec(const json& j) {
  check_keys(j,
             {"mode", "dataset", "train", "ks", "runs", "seed", "output_dir", "compare_cf", "baselines",
              "kd_scheme", "teacher_checkpoint", "student_checkpoint", "top_r", "checkpoints", "repetitions",
              "top_k"},
             "spec");
  ExperimentSpec s;
  if (j.contains("mode")) s.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, {"path", "delimiter", "columns", "header", "min_ratings", "split_seed"}, "dataset");
    read_opt(d, "path", s.dataset_path);
    if (d.contains("delimiter")) s.format.delimiter = parse_delimiter(d.at("delimiter").get<std::string>());
    read_opt(d, "columns", s.format.columns);
    if (d.contains("header")) s.format.header = parse_header(d.at("header").get<std::string>());
    read_opt(d, "min_ratings", s.min_ratings);
    read_opt(d, "split_seed", s.split_seed);
  }
  if (j.contains("train")) s.train = parse_train_config(j.at("train"));
  read_opt(j, "ks", s.ks);
  std::sort(s.ks.begin(), s.ks.end());
  s.ks.erase(std::unique(s.ks.begin(), s.ks.end()), s.ks.end());
  read_opt(j, "runs", s.runs);
  read_opt(j, "seed", s.seed);
  read_opt(j, "output_dir", s.output_dir);
  read_opt(j, "compare_cf", s.compare_cf);
  if (j.contains("baselines"))
    for (const auto& b : j.at("baselines")) s.baselines.push_back(parse_sampling_scheme(b.get<std::string>()));
  if (j.contains("kd_scheme")) s.kd_scheme = parse_sampling_scheme(j.at("kd_scheme").get<std::string>());
  read_opt(j, "teacher_checkpoint", s.teacher_checkpoint);
  read_opt(j, "student_checkpoint", s.student_checkpoint);
  read_opt(j, "top_r", s.top_r);
  read_opt(j, "checkpoints", s.checkpoints);
  read_opt(j, "repetitions", s.repetitions);
  read_opt(j, "top_k", s.top_k);
  return s;
}

nlohmann::json to_json(const ExperimentSpec& s) {
  json baselines = json::array();
  for (auto b : s.baselines) baselines.push_back(to_string(b));
  return {{"mode", to_string(s.mode)},
          {"dataset",
           {{"path", s.dataset_path},
            {"delimiter", delimiter_name(s.format.delimiter)},
            {"columns", s.format.columns},
            {"header", header_name(s.format.header)},
            {"min_ratings", s.min_ratings},
            {"split_seed", s.split_seed}}},
          {"train", to_json(s.train)},
          {"ks", s.ks},
          {"runs", s.runs},
          {"seed", s.seed},
          {"output_dir", s.output_dir},
          {"compare_cf", s.compare_cf},
          {"baselines", baselines},
          {"kd_scheme", to_string(s.kd_scheme)},
          {"teacher_checkpoint", s.teacher_checkpoint},
          {"student_checkpoint", s.student_checkpoint},
          {"top_r", s.top_r},
          {"checkpoints", s.checkpoints},
          {"repetitions", s.repetitions},
          {"top_k", s.top_k}};
}

void apply_env_overrides(ExperimentSpec& spec) {
  if (const char* v = std::getenv("BD_DATASET_PATH"); v && *v) spec.dataset_path = v;
  if (const char* v = std::getenv("BD_OUTPUT_DIR"); v && *v) spec.output_dir = v;
  if (const char* v = std::getenv("BD_SEED"); v && *v) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0') throw std::invalid_argument(std::string("BD_SEED is not an integer: ") + v);
    spec.seed = seed;
  }
}

TrainSeeds run_seeds(std::uint64_t seed, int run) {
  const std::uint64_t base = derive_seed(seed, static_cast<std::uint64_t>(run));
  return {derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3)};
}

Dataset load_dataset(const ExperimentSpec& spec) {
  const auto rows = load_interactions(spec.dataset_path, spec.format);
  return build_dataset(rows, spec.min_ratings, spec.split_seed);
}

fs::path make_run_dir(const fs::path& base, Mode mode) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string stem = to_string(mode) + "-" + stamp;
  fs::create_directories(base);
  for (int k = 0;; ++k) {
    fs::path dir = base / (k == 0 ? stem : stem + "-" + std::to_string(k));
    if (fs::create_directory(dir)) return dir;
  }
}

double improvement(double new_value, double old_value) {
  if (old_value == 0.0) return new_value == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (new_value - old_value) / old_value;
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec, std::ostream& log, const std::string& config_text) {
  spec.validate();
  ExperimentOutcome out;
  out.run_dir = make_run_dir(spec.output_dir, spec.mode);
  if (!config_text.empty()) write_text(out.run_dir / "config.json", config_text);
  write_json(out.run_dir / "resolved_config.json", to_json(spec));
  log << "run directory " << out.run_dir.string() << "\n";

  const Dataset ds = load_dataset(spec);
  save_split_json(ds, out.run_dir / "split.json");
  log << "dataset n=" << ds.n << " m=" << ds.m << " train=" << ds.train_size() << "\n";
  out.summary = {{"mode", to_string(spec.mode)},
                 {"dataset", {{"n", ds.n}, {"m", ds.m}, {"train", ds.train_size()}, {"sparsity", ds.sparsity()}}}};

  try {
    if (spec.mode == Mode::analyze) {
      out.summary["analysis"] = run_analyze(spec, ds, out.run_dir / "analytics");
    } else if (spec.mode == Mode::latency) {
      out.summary["latency"] = run_latency(spec, ds, log);
    } else {
      RunWriter w(out.run_dir, log);
      json extra;
      if (spec.mode == Mode::bd) run_bd(spec, ds, w, extra, log);
      if (spec.mode == Mode::cf_only) run_cf(spec, ds, w);
      if (spec.mode == Mode::baseline_kd) run_kd(spec, ds, w);
      std::string table;
      out.summary.update(summarize(w, spec.ks, table));
      if (!extra.is_null()) out.summary.update(extra);
      write_text(out.run_dir / "summary.md", table);
      log << table;
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("stage " + to_string(spec.mode) + ": " + e.what());
  }
  write_json(out.run_dir / "summary.json", out.summary);
  return out;
}

LatencyStats measure_latency(const FactorModel& model, const Dataset& dataset, int repetitions, int top_k) {
  if (model.n != dataset.n || model.m != dataset.m)
    throw std::invalid_argument("checkpoint shape does not match the dataset");
  LatencyStats st;
  st.parameters = model.parameter_count();
  st.repetitions = repetitions;
  std::vector<double> scores(model.m);
  std::vector<int> idx(model.m);
  const int k = std::min(top_k, model.m);
  double total = 0.0;
  st.min_seconds = std::numeric_limits<double>::infinity();
  long long checksum = 0;
  for (int rep = 0; rep < repetitions; ++rep) {
    const auto start = Clock::now();
    for (int u = 0; u < model.n; ++u) {
      score_all(model, u, scores);
      for (int i : dataset.train_pos[u]) scores[i] = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < model.m; ++i) idx[i] = i;
      std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                        [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
      checksum += idx[0];
    }
    const double s = std::chrono::duration<double>(Clock::now() - start).count();
    total += s;
    st.min_seconds = std::min(st.min_seconds, s);
  }
  st.mean_seconds = total / repetitions;
  // Keeps the ranking work observable.
  if (checksum < 0) st.mean_seconds = -1.0;
  return st;
}

nlohmann::json to_json(const LatencyStats& s) {
  return {{"name", s.name},
          {"parameters", s.parameters},
          {"repetitions", s.repetitions},
          {"min_seconds", s.min_seconds},
          {"mean_seconds", s.mean_seconds}};
}

std::string rankdiff_svg(const std::vector<RankDiffRecord>& series) {
  const double width = 800.0, height = 400.0, mid = height / 2.0;
  int max_abs = 1;
  for (const auto& r : series) max_abs = std::max(max_abs, std::abs(r.diff));
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" viewBox=\"0 0 800 400\">\n";
  s << "<line x1=\"0\" y1=\"200\" x2=\"800\" y2=\"200\" stroke=\"black\" stroke-width=\"1\"/>\n";
  const double bar = series.empty() ? 0.0 : width / static_cast<double>(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double h = (mid - 10.0) * std::abs(series[k].diff) / max_abs;
    const double y = series[k].diff > 0 ? mid - h : mid;
    s << "<rect x=\"" << fmt("%.3f", bar * k) << "\" y=\"" << fmt("%.3f", y) << "\" width=\"" << fmt("%.3f", bar)
      << "\" height=\"" << fmt("%.3f", h) << "\" fill=\"" << (series[k].diff > 0 ? "#2b6cb0" : "#c05621")
      << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string scatter_svg(const std::vector<ScatterPoint>& points, int max_rank) {
  // Point clouds reach millions of entries, so the figure is a 100x100 density
  // grid rather than one mark per point.
  constexpr int cells = 100;
  const double size = 500.0, cell = size / cells;
  std::vector<long long> grid(cells * cells, 0);
  const int span = std::max(max_rank, 1);
  for (const auto& p : points) {
    const int cx = std::min(cells - 1, (std::max(p.rank_s, 1) - 1) * cells / span);
    const int cy = std::min(cells - 1, (std::max(p.rank_t, 1) - 1) * cells / span);
    ++grid[cy * cells + cx];
  }
  const long long peak = std::max<long long>(1, *std::max_element(grid.begin(), grid.end()));
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\" stroke=\"black\"/>\n";
  for (int cy = 0; cy < cells; ++cy) {
    for (int cx = 0; cx < cells; ++cx) {
      const long long c = grid[cy * cells + cx];
      if (c == 0) continue;
      const double alpha = std::log1p(static_cast<double>(c)) / std::log1p(static_cast<double>(peak));
      // rank 1 of the teacher at the top, rank 1 of the student on the left
      s << "<rect x=\"" << fmt("%.2f", cx * cell) << "\" y=\"" << fmt("%.2f", cy * cell) << "\" width=\""
        << fmt("%.2f", cell) << "\" height=\"" << fmt("%.2f", cell) << "\" fill=\"#2b6cb0\" fill-opacity=\""
        << fmt("%.4f", alpha) << "\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

void emit_plots(const Analytics& a, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "rankdiff.csv", std::ios::binary);
    out << "user,item,diff\n";
    for (const auto& r : a.report.series) out << r.user << "," << r.item << "," << r.diff << "\n";
  }
  int max_rank = 1;
  {
    std::ofstream out(dir / "scatter.csv", std::ios::binary);
    out << "rank_s,rank_t\n";
    for (const auto& p : a.report.scatter) {
      out << p.rank_s << "," << p.rank_t << "\n";
      max_rank = std::max({max_rank, p.rank_s, p.rank_t});
    }
  }
  write_text(dir / "rankdiff.svg", rankdiff_svg(a.report.series));
  write_text(dir / "scatter.svg", scatter_svg(a.report.scatter, max_rank));
  write_json(dir / "analytics.json", {{"teacher", a.teacher_name},
                                      {"student", a.student_name},
                                      {"test_interactions", a.report.series.size()},
                                      {"average_rank_difference", a.report.average_rank_difference},
                                      {"student_win_fraction", a.report.student_win_fraction}});
}

void write_sampling_dump(std::ostream& out, Direction direction, const RankSnapshot& teacher,
                         const RankSnapshot& student, int u, const DistillConfig& config) {
  const bool to_student = direction == Direction::teacher_to_student;
  const RankSnapshot& teaching = to_student ? teacher : student;
  const SamplingDistribution dist = make_distribution(direction, teacher, student, u, config);
  std::unordered_map<int, double> prob;
  for (std::size_t k = 0; k < dist.items().size(); ++k)
    prob[dist.items()[k]] = dist.is_fixed() ? 1.0 : dist.probabilities()[k];

  const bool discrepancy = config.scheme == SamplingScheme::rank_discrepancy ||
                           config.scheme == SamplingScheme::swapped_rank_discrepancy;
  const bool use_tanh = to_student == (config.scheme == SamplingScheme::rank_discrepancy);
  out << "item,rank_T,rank_S,weight,probability\n";
  const auto order = teaching.ordered_items(u);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int i = order[k];
    const int rt = teacher.rank(u, i), rs = student.rank(u, i);
    const int rank = static_cast<int>(k) + 1;
    double w = 0.0;
    if (discrepancy) {
      const double d = to_student ? rs - rt : rt - rs;
      w = use_tanh ? std::tanh(std::max(d * config.eps_t, 0.0)) : std::exp(d * config.eps_e);
    } else if (config.scheme == SamplingScheme::uniform) {
      w = 1.0;
    } else if (config.scheme == SamplingScheme::top_n) {
      w = rank <= config.samples_per_user ? 1.0 : 0.0;
    } else {
      const bool kept = config.rank_aware_truncation == 0 || rank <= config.rank_aware_truncation;
      w = kept ? std::exp(-rank * config.eps_e) : 0.0;
    }
    const auto it = prob.find(i);
    out << i << "," << rt << "," << rs << "," << fmt("%.10g", w) << "," << fmt("%.10g", it == prob.end() ? 0.0 : it->second)
        << "\n";
  }
}

}  // namespace bd
