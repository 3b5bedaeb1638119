// Command-line entry point: training pipelines, evaluation, analysis, latency
// and sampling dumps.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bd/experiment.hpp"
#include "bd/kernels.hpp"

namespace {

using bd::ExperimentSpec;

struct CommonOptions {
  std::string config;
  std::string data;
  std::string columns;
  std::string delimiter;
  std::optional<int> min_ratings;
  std::optional<std::uint64_t> split_seed;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> epochs;
  std::vector<int> ks;
};

void add_common(CLI::App* app, CommonOptions& o, bool training) {
  app->add_option("-c,--config", o.config, "JSON experiment spec")->check(CLI::ExistingFile);
  app->add_option("-d,--data", o.data, "interaction file (overrides the spec and BD_DATASET_PATH)");
  app->add_option("--columns", o.columns, "column layout over u,i,r,t (default uirt)");
  app->add_option("--delimiter", o.delimiter, "auto, tab or a single character");
  app->add_option("--min-ratings", o.min_ratings, "drop users with fewer interactions");
  app->add_option("--split-seed", o.split_seed, "seed of the random split when timestamps are absent");
  app->add_option("-o,--out", o.out, "base output directory");
  app->add_option("-k,--k", o.ks, "cutoffs for H@K and N@K");
  if (training) {
    app->add_option("--seed", o.seed, "base seed of the runs");
    app->add_option("--runs", o.runs, "number of independent runs");
    app->add_option("--epochs", o.epochs, "total epochs including warm-up");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Spec defaults < config file < environment < command line.
ExperimentSpec build_spec(const CommonOptions& o, bd::Mode mode, std::string& config_text) {
  ExperimentSpec spec;
  if (!o.config.empty()) {
    config_text = read_file(o.config);
    spec = bd::parse_spec(nlohmann::json::parse(config_text));
  }
  spec.mode = mode;
  bd::apply_env_overrides(spec);
  if (!o.data.empty()) spec.dataset_path = o.data;
  if (!o.columns.empty()) spec.format.columns = o.columns;
  if (!o.delimiter.empty())
    spec.format.delimiter = o.delimiter == "auto" ? '\0' : o.delimiter == "tab" ? '\t' : o.delimiter.at(0);
  if (o.min_ratings) spec.min_ratings = *o.min_ratings;
  if (o.split_seed) spec.split_seed = *o.split_seed;
  if (!o.out.empty()) spec.output_dir = o.out;
  if (o.seed) spec.seed = *o.seed;
  if (o.runs) spec.runs = *o.runs;
  if (o.epochs) spec.train.epochs = *o.epochs;
  if (!o.ks.empty()) spec.ks = o.ks;
  return spec;
}

int run(const CommonOptions& o, bd::Mode mode, const std::function<void(ExperimentSpec&)>& extra = {}) {
  std::string text;
  ExperimentSpec spec = build_spec(o, mode, text);
  if (extra) extra(spec);
  const auto outcome = bd::run_experiment(spec, std::cerr, text);
  std::cout << outcome.run_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bidirectional teacher/student distillation for top-K recommendation"};
  app.require_subcommand(1);
  bool force_scalar = false;
  app.add_flag("--scalar", force_scalar, "use the scalar kernels even when AVX2 is available");

  CommonOptions bd_opt, kd_opt, cf_opt, an_opt, lat_opt, ev_opt, dump_opt;

  auto* train_bd = app.add_subcommand("train-bd", "joint teacher/student training with bidirectional distillation");
  add_common(train_bd, bd_opt, true);
  bool no_compare = false;
  std::vector<std::string> baselines;
  train_bd->add_flag("--no-compare", no_compare, "skip the CF-only reference models");
  train_bd->add_option("--baseline", baselines, "also train a frozen-teacher KD student with this scheme");

  auto* train_kd = app.add_subcommand("train-kd", "student distilled from a frozen teacher");
  add_common(train_kd, kd_opt, true);
  std::string kd_scheme, kd_teacher;
  train_kd->add_option("--scheme", kd_scheme, "top_n, rank_aware, uniform, rank_discrepancy or swapped");
  train_kd->add_option("--teacher", kd_teacher, "frozen teacher checkpoint (default: train one per run)");

  auto* train_cf = app.add_subcommand("train-cf", "CF-only teacher and student");
  add_common(train_cf, cf_opt, true);

  auto* eval = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  add_common(eval, ev_opt, false);
  std::vector<std::string> eval_checkpoints;
  eval->add_option("checkpoints", eval_checkpoints, "model checkpoints")->required()->check(CLI::ExistingFile);
  bool per_user = false;
  eval->add_flag("--per-user", per_user, "include per-user metric vectors");

  auto* analyze = app.add_subcommand("analyze", "rank-difference analytics between two checkpoints");
  add_common(analyze, an_opt, false);
  std::string an_teacher, an_student;
  int top_r = 0;
  analyze->add_option("--teacher", an_teacher)->check(CLI::ExistingFile);
  analyze->add_option("--student", an_student)->check(CLI::ExistingFile);
  analyze->add_option("--top-r", top_r, "scatter keeps candidates within this rank of either model");

  auto* latency = app.add_subcommand("latency", "time full recommendation-list generation");
  add_common(latency, lat_opt, false);
  std::vector<std::string> lat_checkpoints;
  int repetitions = 0, top_k = 0;
  latency->add_option("checkpoints", lat_checkpoints)->check(CLI::ExistingFile);
  latency->add_option("--repetitions", repetitions);
  latency->add_option("--top-k", top_k);

  auto* dump = app.add_subcommand("dump-sampling", "one user's sampling distribution as CSV");
  add_common(dump, dump_opt, false);
  std::string dump_teacher, dump_student, dump_dir = "t2s", dump_scheme, dump_out;
  int dump_user = 0;
  std::optional<double> eps_t, eps_e;
  std::optional<int> samples;
  dump->add_option("--teacher", dump_teacher)->required()->check(CLI::ExistingFile);
  dump->add_option("--student", dump_student)->required()->check(CLI::ExistingFile);
  dump->add_option("--user", dump_user, "dense user index")->required();
  dump->add_option("--direction", dump_dir, "t2s or s2t")->check(CLI::IsMember({"t2s", "s2t"}));
  dump->add_option("--scheme", dump_scheme);
  dump->add_option("--eps-t", eps_t);
  dump->add_option("--eps-e", eps_e);
  dump->add_option("-n,--samples", samples);
  dump->add_option("--csv", dump_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (force_scalar) bd::kernels::select_isa(bd::kernels::Isa::scalar);

    if (*train_bd) {
      return run(bd_opt, bd::Mode::bd, [&](ExperimentSpec& s) {
        if (no_compare) s.compare_cf = false;
        for (const auto& b : baselines) s.baselines.push_back(bd::parse_sampling_scheme(b));
      });
    }
    if (*train_kd) {
      return run(kd_opt, bd::Mode::baseline_kd, [&](ExperimentSpec& s) {
        if (!kd_scheme.empty()) s.kd_scheme = bd::parse_sampling_scheme(kd_scheme);
        if (!kd_teacher.empty()) s.teacher_checkpoint = kd_teacher;
      });
    }
    if (*train_cf) return run(cf_opt, bd::Mode::cf_only);
    if (*analyze) {
      return run(an_opt, bd::Mode::analyze, [&](ExperimentSpec& s) {
        if (!an_teacher.empty()) s.teacher_checkpoint = an_teacher;
        if (!an_student.empty()) s.student_checkpoint = an_student;
        if (top_r > 0) s.top_r = top_r;
      });
    }
    if (*latency) {
      return run(lat_opt, bd::Mode::latency, [&](ExperimentSpec& s) {
        if (!lat_checkpoints.empty()) s.checkpoints = lat_checkpoints;
        if (repetitions > 0) s.repetitions = repetitions;
        if (top_k > 0) s.top_k = top_k;
      });
    }

    std::string text;
    if (*eval) {
      ExperimentSpec spec = build_spec(ev_opt, bd::Mode::cf_only, text);
      if (spec.dataset_path.empty()) throw std::invalid_argument("--data is required");
      const bd::Dataset ds = bd::load_dataset(spec);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& path : eval_checkpoints) {
        bd::EvalReport r = bd::evaluate(bd::load_checkpoint(path), ds, spec.ks);
        r.model_name = path;
        out.push_back(bd::to_json(r, per_user));
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (*dump) {
      ExperimentSpec spec = build_spec(dump_opt, bd::Mode::analyze, text);
      if (spec.dataset_path.empty()) throw std::invalid_argument("--data is required");
      bd::DistillConfig dc = spec.train.distill;
      if (!dump_scheme.empty()) dc.scheme = bd::parse_sampling_scheme(dump_scheme);
      if (eps_t) dc.eps_t = *eps_t;
      if (eps_e) dc.eps_e = *eps_e;
      if (samples) dc.samples_per_user = *samples;
      dc.validate();
      const bd::Dataset ds = bd::load_dataset(spec);
      if (dump_user < 0 || dump_user >= ds.n) throw std::invalid_argument("--user out of range");
      const auto t = bd::snapshot(bd::load_checkpoint(dump_teacher), ds, 0);
      const auto s = bd::snapshot(bd::load_checkpoint(dump_student), ds, 0);
      const auto dir = dump_dir == "t2s" ? bd::Direction::teacher_to_student : bd::Direction::student_to_teacher;
      if (dump_out.empty()) {
        bd::write_sampling_dump(std::cout, dir, t, s, dump_user, dc);
      } else {
        std::ofstream out(dump_out);
        if (!out) throw std::runtime_error("cannot write " + dump_out);
        bd::write_sampling_dump(out, dir, t, s, dump_user, dc);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
