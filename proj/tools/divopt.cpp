// Command-line front end: run, ablate, sweep, grid, selftest.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divopt/errors.hpp"
#include "divopt/experiment.hpp"

namespace fs = std::filesystem;
using namespace divopt;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3 };

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::size_t jobs = 1;
};

ExperimentSpec load_base(const CommonOptions& o) {
  ExperimentSpec spec = o.config.empty() ? ExperimentSpec{} : load_experiment_spec(o.config);
  if (!o.out.empty()) spec.out_dir = o.out;
  if (o.seed) spec.train.seed = *o.seed;
  if (!o.variant.empty()) {
    const auto v = parse_variant(o.variant);
    if (!v) throw ConfigError("variant: unknown method variant \"" + o.variant + "\"");
    spec.train.variant = *v;
  }
  return spec;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_run(const CommonOptions& o) {
  const ExperimentSpec spec = load_base(o);
  const RunResult r = run_experiment(spec);
  print_warnings(r.warnings);
  std::printf("variant %s  avg %.4f  common %.4f  unknown %.4f  delta %.4f\n",
              std::string(to_string(spec.train.variant)).c_str(), r.report.average_accuracy,
              r.report.common_accuracy, r.report.unknown_recall, r.report.delta);
  std::printf("artifacts written to %s\n", spec.out_dir.c_str());
  return kOk;
}

int cmd_ablate(const CommonOptions& o) {
  const ExperimentSpec spec = load_base(o);
  const auto rows = ablate(spec, o.jobs);
  std::fputs(ablation_csv(rows).c_str(), stdout);
  std::printf("written to %s\n", (fs::path(spec.out_dir) / "ablation.csv").string().c_str());
  return kOk;
}

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::vector<double>& values) {
  // With --param the config file is the base experiment; without it the file
  // is a whole sweep spec.
  SweepSpec spec;
  if (!o.config.empty()) {
    if (param.empty()) spec = parse_sweep_spec(read_file(o.config));
    else spec.base = parse_experiment_spec(read_file(o.config));
  }
  if (!param.empty()) spec.param = param;
  if (!values.empty()) spec.values = values;
  if (!o.out.empty()) spec.base.out_dir = o.out;
  if (o.seed) spec.base.train.seed = *o.seed;
  if (!o.variant.empty()) {
    const auto v = parse_variant(o.variant);
    if (!v) throw ConfigError("variant: unknown method variant \"" + o.variant + "\"");
    spec.base.train.variant = *v;
  }
  if (spec.param.empty()) throw ConfigError("param: give --param or a sweep config");
  const auto rows = sweep(spec, o.jobs);
  std::fputs(sweep_csv(rows).c_str(), stdout);
  std::printf("written to %s\n", (fs::path(spec.base.out_dir) / "sweep.csv").string().c_str());
  return kOk;
}

int cmd_grid(const CommonOptions& o, const std::string& model_path) {
  const fs::path model_file(model_path);
  ExperimentSpec spec;
  if (!o.config.empty()) {
    spec = load_experiment_spec(o.config);
  } else {
    const fs::path manifest = model_file.parent_path() / "manifest.json";
    if (!fs::exists(manifest)) {
      throw ConfigError("config: no --config given and no manifest.json beside the model");
    }
    spec = spec_from_manifest(read_file(manifest));
  }
  if (o.seed) spec.train.seed = *o.seed;
  const TwoHeadModel model = parse_parameters(read_file(model_file));
  const fs::path out = o.out.empty() ? model_file.parent_path() : fs::path(o.out);
  render_grid(model, spec, out);
  std::printf("boundary.csv and boundary.svg written to %s\n", out.string().c_str());
  return kOk;
}

int cmd_selftest(const CommonOptions& o) {
  const SelftestResult r = selftest(o.seed.value_or(1));
  for (const auto& line : r.lines) std::printf("%s\n", line.c_str());
  std::printf("%s\n", r.passed ? "selftest passed" : "selftest FAILED");
  return r.passed ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divergence-optimization training for noisy universal domain adaptation (toy scale)"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string param;
  std::vector<double> values;
  std::string model_path;

  auto add_common = [&](CLI::App* sub, bool jobs) {
    sub->add_option("--config", opts.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (overrides config)");
    sub->add_option("--seed", opts.seed, "Master seed (overrides config)");
    sub->add_option("--variant", opts.variant, "Method variant (overrides config)");
    if (jobs) sub->add_option("--jobs", opts.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  };

  CLI::App* run = app.add_subcommand("run", "Train, evaluate and write artifacts for one config");
  add_common(run, false);
  CLI::App* abl = app.add_subcommand("ablate", "Run all nine method variants on the same data");
  add_common(abl, true);
  CLI::App* swp = app.add_subcommand("sweep", "One run per value of a hyperparameter");
  add_common(swp, true);
  swp->add_option("--param", param, "alpha, lambda, delta, margin or n_inner; --config is then the base experiment");
  swp->add_option("--values", values, "Values to sweep")->delimiter(',');
  CLI::App* grd = app.add_subcommand("grid", "Re-render the decision boundary of a saved model");
  add_common(grd, false);
  grd->add_option("--model", model_path, "model.csv written by run")->required()->check(CLI::ExistingFile);
  CLI::App* slf = app.add_subcommand("selftest", "Loss identities and gradient checks");
  slf->add_option("--seed", opts.seed, "Seed for the random cases");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(opts);
    if (*abl) return cmd_ablate(opts);
    if (*swp) return cmd_sweep(opts, param, values);
    if (*grd) return cmd_grid(opts, model_path);
    if (*slf) return cmd_selftest(opts);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
