#pragma once

// Experiment orchestration: JSON run specs, the per-mode pipelines, latency
// measurement and the analytics/plot files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bd/data.hpp"
#include "bd/distill.hpp"
#include "bd/eval.hpp"
#include "bd/model.hpp"
#include "bd/ranking.hpp"
#include "bd/train.hpp"

namespace bd {

enum class Mode { bd, baseline_kd, cf_only, analyze, latency };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

struct ExperimentSpec {
  Mode mode = Mode::bd;

  std::string dataset_path;
  InputFormat format;
  int min_ratings = 10;
  std::uint64_t split_seed = 0;

  TrainConfig train;
  std::vector<int> ks{50, 100};
  int runs = 5;
  // Run r draws its four training seeds from derive_seed(seed, r).
  std::uint64_t seed = 1;
  std::string output_dir = "runs";

  // bd mode: also train the CF-only teacher and student of every run, and
  // unidirectional KD students for each listed scheme, to fill the
  // improvement rows.
  bool compare_cf = true;
  std::vector<SamplingScheme> baselines;

  // baseline-kd mode. Without a checkpoint a CF-only teacher is trained per run.
  SamplingScheme kd_scheme = SamplingScheme::top_n;
  std::string teacher_checkpoint;

  // analyze mode (teacher_checkpoint above is shared).
  std::string student_checkpoint;
  int top_r = 1000;

  // latency mode.
  std::vector<std::string> checkpoints;
  int repetitions = 5;
  int top_k = 50;

  void validate() const;
};

ExperimentSpec parse_spec(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& spec);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig parse_train_config(const nlohmann::json& j, TrainConfig base = {});

// BD_DATASET_PATH, BD_OUTPUT_DIR and BD_SEED replace the corresponding fields.
void apply_env_overrides(ExperimentSpec& spec);

TrainSeeds run_seeds(std::uint64_t seed, int run);

Dataset load_dataset(const ExperimentSpec& spec);

// Creates <base>/<mode>-YYYYmmdd-HHMMSS[-k] and returns it.
std::filesystem::path make_run_dir(const std::filesystem::path& base, Mode mode);

struct ExperimentOutcome {
  std::filesystem::path run_dir;
  nlohmann::json summary;
};

// `config_text` is echoed verbatim next to the resolved spec when non-empty.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, std::ostream& log, const std::string& config_text = {});

// (new - old) / old
double improvement(double new_value, double old_value);

struct LatencyStats {
  std::string name;
  long long parameters = 0;
  int repetitions = 0;
  double min_seconds = 0.0;
  double mean_seconds = 0.0;
};

// Times top-k list generation (score all items, drop train positives, partial
// sort) for every user.
LatencyStats measure_latency(const FactorModel& model, const Dataset& dataset, int repetitions, int top_k = 50);
nlohmann::json to_json(const LatencyStats& stats);

struct Analytics {
  RankDiffReport report;
  std::string teacher_name = "teacher";
  std::string student_name = "student";
};

// rankdiff.csv (user,item,diff), scatter.csv (rank_s,rank_t) and an SVG of
// each. Output is a function of the inputs only.
void emit_plots(const Analytics& analytics, const std::filesystem::path& dir);
std::string rankdiff_svg(const std::vector<RankDiffRecord>& series);
std::string scatter_svg(const std::vector<ScatterPoint>& points, int max_rank);

// CSV "item,rank_T,rank_S,weight,probability" of one user's sampling
// distribution, rows in the teaching model's rank order.
void write_sampling_dump(std::ostream& out, Direction direction, const RankSnapshot& teacher,
                         const RankSnapshot& student, int u, const DistillConfig& config);

}  // namespace bd
