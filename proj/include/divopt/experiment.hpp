#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "divopt/eval.hpp"
#include "divopt/trainer.hpp"

namespace divopt {

/// Everything needed to reproduce one run. Serialized as a single flat JSON
/// object; see to_json() for the key set.
struct ExperimentSpec {
  std::string scenario = "toy";  // "toy" preset or "blobs" (geometry required)
  ScenarioSpec data = toy_scenario_spec();
  TrainConfig train;
  std::string out_dir = "divopt-out";
  GridBounds grid_bounds;
  std::size_t grid_resolution = 160;

  bool operator==(const ExperimentSpec&) const = default;
};

/// Throws ConfigError with a "field: reason" message.
void validate(const ExperimentSpec& spec);

std::string to_json(const ExperimentSpec& spec);

/// Strict: unknown keys and wrong types are ConfigErrors. Missing keys keep
/// their defaults; "blobs" scenarios must give source_centers and n_common.
ExperimentSpec parse_experiment_spec(std::string_view json_text);

ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

/// Reads the "spec" member of a manifest written by run_experiment().
ExperimentSpec spec_from_manifest(std::string_view manifest_json);

std::string build_id();

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

struct RunResult {
  EvalReport report;
  TrainState state;
  std::size_t source_classes = 0;
  std::vector<std::string> warnings;
};

inline const std::vector<std::string> kRunArtifacts = {
    "trace.csv",   "report.csv",  "density.csv",  "boundary.csv",
    "boundary.svg", "model.csv",  "dataset.csv",  "manifest.json"};

/// Generates data, trains, evaluates. Writes kRunArtifacts into
/// spec.out_dir unless `write_artifacts` is false.
RunResult run_experiment(const ExperimentSpec& spec, bool write_artifacts = true);

/// Runs tasks [0, count) on at most `jobs` threads. The first exception
/// thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task);

struct AblationRow {
  MethodVariant variant = MethodVariant::Full;
  double avg_accuracy = 0.0;
  double common_accuracy = 0.0;
  double unknown_recall = 0.0;
};

/// All nine variants on the base spec's data and seed, each writing into
/// out_dir/<variant>. Also writes out_dir/ablation.csv.
std::vector<AblationRow> ablate(const ExperimentSpec& base, std::size_t jobs,
                                bool write_artifacts = true);

/// CSV `variant,avg_accuracy,common_acc,unknown_recall`.
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct SweepSpec {
  std::string param;  // alpha, lambda, delta, margin or n_inner
  std::vector<double> values;
  ExperimentSpec base;

  bool operator==(const SweepSpec&) const = default;
};

void validate(const SweepSpec& spec);
std::string to_json(const SweepSpec& spec);
/// {"param": ..., "values": [...], "base": {experiment spec}}.
SweepSpec parse_sweep_spec(std::string_view json_text);

/// Copy of `base` with `param` set to `value`.
ExperimentSpec with_param(const ExperimentSpec& base, std::string_view param, double value);

struct SweepRow {
  std::string param;
  double value = 0.0;
  double avg_accuracy = 0.0;
};

/// One run per value, each writing into out_dir/<param>_<index>. Also writes
/// out_dir/sweep.csv.
std::vector<SweepRow> sweep(const SweepSpec& spec, std::size_t jobs, bool write_artifacts = true);

/// CSV `param,value,avg_accuracy`.
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Re-renders boundary.csv and boundary.svg for a saved model into `out_dir`.
/// `spec` supplies delta, grid bounds and the data drawn as points.
void render_grid(const TwoHeadModel& model, const ExperimentSpec& spec,
                 const std::filesystem::path& out_dir);

struct SelftestResult {
  std::vector<std::string> lines;
  bool passed = true;
};

/// Loss identities over random probability pairs plus gradient checks of
/// every training objective on a small model.
SelftestResult selftest(std::uint64_t seed);

}  // namespace divopt
