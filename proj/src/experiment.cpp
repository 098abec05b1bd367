#include "divopt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "divopt/errors.hpp"
#include "divopt/grad_check.hpp"
#include "divopt/rng.hpp"

#ifndef DIVOPT_VERSION
#define DIVOPT_VERSION "unknown"
#endif
#ifndef DIVOPT_BUILD_TYPE
#define DIVOPT_BUILD_TYPE "unknown"
#endif

namespace divopt {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

Json centers_json(const std::vector<std::vector<double>>& centers) {
  Json out = Json::array();
  for (const auto& c : centers) out.push_back(c);
  return out;
}

double get_number(const Json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(key + ": must be finite");
  return x;
}

std::uint64_t get_unsigned(const Json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError(key + ": expected a non-negative integer");
}

std::string get_string(const Json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key + ": expected a string");
  return v.get<std::string>();
}

std::vector<double> get_vector(const Json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(get_number(v[i], key + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<std::vector<double>> get_centers(const Json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key + ": expected an array of points");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(get_vector(v[i], key + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Json parse_json(std::string_view text, const char* what) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

Json spec_json(const ExperimentSpec& s) {
  Json j;
  j["scenario"] = s.scenario;
  j["source_centers"] = centers_json(s.data.source_centers);
  j["target_private_centers"] = centers_json(s.data.target_private_centers);
  j["blob_stddev"] = s.data.stddev;
  j["samples_per_class"] = s.data.samples_per_class;
  j["target_shift"] = s.data.target_shift;
  j["n_common"] = s.data.n_common;
  j["noise_kind"] = std::string(to_string(s.data.noise.kind));
  j["noise_rate"] = s.data.noise.rate;
  j["alpha"] = s.train.alpha;
  j["lambda"] = s.train.lambda;
  j["delta"] = s.train.delta ? Json(*s.train.delta) : Json(nullptr);
  j["margin"] = s.train.margin;
  j["n_inner"] = s.train.n_inner;
  j["learning_rate"] = s.train.learning_rate;
  j["momentum"] = s.train.momentum;
  j["batch_size"] = s.train.batch_size;
  j["epochs"] = s.train.epochs;
  j["seed"] = s.train.seed;
  j["variant"] = std::string(to_string(s.train.variant));
  j["hidden_width"] = s.train.hidden_width;
  j["out_dir"] = s.out_dir;
  j["grid_bounds"] = {{"x_min", s.grid_bounds.x_min},
                      {"x_max", s.grid_bounds.x_max},
                      {"y_min", s.grid_bounds.y_min},
                      {"y_max", s.grid_bounds.y_max}};
  j["grid_resolution"] = s.grid_resolution;
  return j;
}

GridBounds parse_bounds(const Json& v) {
  if (!v.is_object()) throw ConfigError("grid_bounds: expected an object");
  GridBounds b;
  for (const auto& [key, value] : v.items()) {
    const std::string name = "grid_bounds." + key;
    if (key == "x_min") b.x_min = get_number(value, name);
    else if (key == "x_max") b.x_max = get_number(value, name);
    else if (key == "y_min") b.y_min = get_number(value, name);
    else if (key == "y_max") b.y_max = get_number(value, name);
    else throw ConfigError("grid_bounds: unknown key '" + key + "'");
  }
  return b;
}

ExperimentSpec spec_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("experiment spec: expected a JSON object");
  ExperimentSpec s;
  if (j.contains("scenario")) s.scenario = get_string(j["scenario"], "scenario");
  if (s.scenario == "blobs") {
    if (!j.contains("source_centers")) throw ConfigError("source_centers: required for blobs scenario");
    if (!j.contains("n_common")) throw ConfigError("n_common: required for blobs scenario");
    s.data = ScenarioSpec{};
  } else if (s.scenario != "toy") {
    throw ConfigError("scenario: must be \"toy\" or \"blobs\", got \"" + s.scenario + "\"");
  }

  bool shift_given = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "scenario") continue;
    else if (key == "source_centers") s.data.source_centers = get_centers(v, key);
    else if (key == "target_private_centers") s.data.target_private_centers = get_centers(v, key);
    else if (key == "blob_stddev") s.data.stddev = get_number(v, key);
    else if (key == "samples_per_class") s.data.samples_per_class = get_unsigned(v, key);
    else if (key == "target_shift") {
      s.data.target_shift = get_vector(v, key);
      shift_given = true;
    } else if (key == "n_common") s.data.n_common = get_unsigned(v, key);
    else if (key == "noise_kind") {
      const std::string kind = get_string(v, key);
      if (kind == to_string(NoiseKind::PairFlip)) s.data.noise.kind = NoiseKind::PairFlip;
      else if (kind == to_string(NoiseKind::SymmetricFlip)) s.data.noise.kind = NoiseKind::SymmetricFlip;
      else throw ConfigError("noise_kind: must be \"pair\" or \"symmetric\", got \"" + kind + "\"");
    } else if (key == "noise_rate") s.data.noise.rate = get_number(v, key);
    else if (key == "alpha") s.train.alpha = get_number(v, key);
    else if (key == "lambda") s.train.lambda = get_number(v, key);
    else if (key == "delta") {
      if (v.is_null()) s.train.delta.reset();
      else s.train.delta = get_number(v, key);
    } else if (key == "margin") s.train.margin = get_number(v, key);
    else if (key == "n_inner") s.train.n_inner = get_unsigned(v, key);
    else if (key == "learning_rate") s.train.learning_rate = get_number(v, key);
    else if (key == "momentum") s.train.momentum = get_number(v, key);
    else if (key == "batch_size") s.train.batch_size = get_unsigned(v, key);
    else if (key == "epochs") s.train.epochs = get_unsigned(v, key);
    else if (key == "seed") s.train.seed = get_unsigned(v, key);
    else if (key == "variant") {
      const std::string name = get_string(v, key);
      const auto variant = parse_variant(name);
      if (!variant) throw ConfigError("variant: unknown method variant \"" + name + "\"");
      s.train.variant = *variant;
    } else if (key == "hidden_width") s.train.hidden_width = get_unsigned(v, key);
    else if (key == "out_dir") s.out_dir = get_string(v, key);
    else if (key == "grid_bounds") s.grid_bounds = parse_bounds(v);
    else if (key == "grid_resolution") s.grid_resolution = get_unsigned(v, key);
    else throw ConfigError("unknown key '" + key + "'");
  }
  if (s.scenario == "blobs" && !shift_given && !s.data.source_centers.empty()) {
    s.data.target_shift.assign(s.data.source_centers.front().size(), 0.0);
  }
  return s;
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

}  // namespace

void validate(const ExperimentSpec& spec) {
  validate(spec.train);
  if (spec.scenario != "toy" && spec.scenario != "blobs") {
    throw ConfigError("scenario: must be \"toy\" or \"blobs\"");
  }
  if (spec.out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  if (spec.data.source_centers.empty()) throw ConfigError("source_centers: must not be empty");
  for (const auto& c : spec.data.source_centers) {
    if (c.size() != 2) throw ConfigError("source_centers: points must be 2-D (boundary grids are planar)");
  }
  if (!(spec.data.noise.rate >= 0.0 && spec.data.noise.rate < 1.0)) {
    throw ConfigError("noise_rate: must lie in [0, 1)");
  }
  const GridBounds& b = spec.grid_bounds;
  if (!(b.x_min < b.x_max)) throw ConfigError("grid_bounds: x_min must be < x_max");
  if (!(b.y_min < b.y_max)) throw ConfigError("grid_bounds: y_min must be < y_max");
  if (spec.grid_resolution < 2 || spec.grid_resolution > 4096) {
    throw ConfigError("grid_resolution: must lie in [2, 4096]");
  }
  const std::size_t per_domain = spec.data.samples_per_class *
                                 std::max<std::size_t>(1, spec.data.source_centers.size());
  if (spec.train.batch_size > per_domain) {
    throw ConfigError("batch_size: exceeds the number of source samples");
  }
  // Geometry checks (dimensions, private-centre distance) live in the builder.
  build_scenario(spec.data, spec.train.seed);
}

std::string to_json(const ExperimentSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

ExperimentSpec parse_experiment_spec(std::string_view json_text) {
  return spec_from_json(parse_json(json_text, "experiment spec"));
}

ExperimentSpec load_experiment_spec(const fs::path& path) {
  return parse_experiment_spec(read_file(path));
}

ExperimentSpec spec_from_manifest(std::string_view manifest_json) {
  const Json m = parse_json(manifest_json, "manifest");
  if (!m.is_object() || !m.contains("spec")) throw ConfigError("manifest: missing \"spec\"");
  return spec_from_json(m["spec"]);
}

std::string build_id() {
#if defined(__clang__)
  const char* compiler = "clang";
#elif defined(__GNUC__)
  const char* compiler = "gcc";
#else
  const char* compiler = "c++";
#endif
  return std::string("divopt ") + DIVOPT_VERSION + " (" + DIVOPT_BUILD_TYPE + ", " + compiler + " " +
         __VERSION__ + ")";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

RunResult run_experiment(const ExperimentSpec& spec, bool write_artifacts) {
  validate(spec);
  const Scenario scenario = build_scenario(spec.data, spec.train.seed);

  RunResult result;
  result.state = train(scenario.source, scenario.target, spec.train);
  result.source_classes = scenario.source.source_class_count();
  const double delta = resolve_delta(spec.train, result.source_classes);
  result.report = evaluate(result.state.model, scenario.target, delta);
  result.warnings = scenario.warnings;
  result.warnings.insert(result.warnings.end(), result.report.warnings.begin(),
                         result.report.warnings.end());
  if (!write_artifacts) return result;

  const fs::path out(spec.out_dir);
  fs::create_directories(out);
  const BoundaryGrid grid =
      boundary_grid(result.state.model, spec.grid_bounds, spec.grid_resolution, delta);
  write_file_atomic(out / "trace.csv", trace_csv(result.state.trace));
  write_file_atomic(out / "report.csv", report_csv(result.report));
  write_file_atomic(out / "density.csv", density_csv(result.report));
  write_file_atomic(out / "boundary.csv", boundary_csv(grid));
  write_file_atomic(out / "boundary.svg", boundary_svg(grid, &scenario.source, &scenario.target));
  write_file_atomic(out / "model.csv", serialize_parameters(result.state.model));
  write_file_atomic(out / "dataset.csv", dataset_csv(scenario.source, scenario.target));

  Json manifest;
  manifest["spec"] = spec_json(spec);
  manifest["resolved_delta"] = delta;
  manifest["seed"] = spec.train.seed;
  manifest["source_classes"] = result.source_classes;
  manifest["build"] = build_id();
  manifest["metrics"] = {{"avg_accuracy", result.report.average_accuracy},
                         {"common_accuracy", result.report.common_accuracy},
                         {"unknown_recall", result.report.unknown_recall}};
  manifest["warnings"] = result.warnings;
  manifest["artifacts"] = kRunArtifacts;
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<AblationRow> ablate(const ExperimentSpec& base, std::size_t jobs, bool write_artifacts) {
  validate(base);
  constexpr std::size_t n = std::size(kAllVariants);
  std::vector<AblationRow> rows(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    ExperimentSpec spec = base;
    spec.train.variant = kAllVariants[i];
    spec.out_dir = (fs::path(base.out_dir) / std::string(to_string(kAllVariants[i]))).string();
    const RunResult r = run_experiment(spec, write_artifacts);
    rows[i] = {kAllVariants[i], r.report.average_accuracy, r.report.common_accuracy,
               r.report.unknown_recall};
  });
  if (write_artifacts) {
    fs::create_directories(base.out_dir);
    write_file_atomic(fs::path(base.out_dir) / "ablation.csv", ablation_csv(rows));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,avg_accuracy,common_acc,unknown_recall\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.variant)) + "," + format_fixed(r.avg_accuracy) + "," +
           format_fixed(r.common_accuracy) + "," + format_fixed(r.unknown_recall) + "\n";
  }
  return out;
}

ExperimentSpec with_param(const ExperimentSpec& base, std::string_view param, double value) {
  ExperimentSpec spec = base;
  if (param == "alpha") spec.train.alpha = value;
  else if (param == "lambda") spec.train.lambda = value;
  else if (param == "delta") spec.train.delta = value;
  else if (param == "margin") spec.train.margin = value;
  else if (param == "n_inner") {
    if (!(value >= 1.0 && value == std::floor(value) && value < 1e9)) {
      throw ConfigError("n_inner: sweep values must be positive integers");
    }
    spec.train.n_inner = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("param: must be one of alpha, lambda, delta, margin, n_inner; got \"" +
                      std::string(param) + "\"");
  }
  return spec;
}

void validate(const SweepSpec& spec) {
  if (spec.values.empty()) throw ConfigError("values: must not be empty");
  validate(spec.base);
  for (double v : spec.values) validate(with_param(spec.base, spec.param, v).train);
}

std::string to_json(const SweepSpec& spec) {
  Json j;
  j["param"] = spec.param;
  j["values"] = spec.values;
  j["base"] = spec_json(spec.base);
  return j.dump(2) + "\n";
}

SweepSpec parse_sweep_spec(std::string_view json_text) {
  const Json j = parse_json(json_text, "sweep spec");
  if (!j.is_object()) throw ConfigError("sweep spec: expected a JSON object");
  SweepSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "param") s.param = get_string(v, key);
    else if (key == "values") s.values = get_vector(v, key);
    else if (key == "base") s.base = spec_from_json(v);
    else throw ConfigError("unknown key '" + key + "'");
  }
  if (s.param.empty()) throw ConfigError("param: required");
  return s;
}

std::vector<SweepRow> sweep(const SweepSpec& spec, std::size_t jobs, bool write_artifacts) {
  validate(spec);
  std::vector<SweepRow> rows(spec.values.size());
  parallel_for(spec.values.size(), jobs, [&](std::size_t i) {
    ExperimentSpec child = with_param(spec.base, spec.param, spec.values[i]);
    child.out_dir = (fs::path(spec.base.out_dir) / (spec.param + "_" + std::to_string(i))).string();
    const RunResult r = run_experiment(child, write_artifacts);
    rows[i] = {spec.param, spec.values[i], r.report.average_accuracy};
  });
  if (write_artifacts) {
    fs::create_directories(spec.base.out_dir);
    write_file_atomic(fs::path(spec.base.out_dir) / "sweep.csv", sweep_csv(rows));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "param,value,avg_accuracy\n";
  for (const auto& r : rows) {
    out += r.param + "," + format_double(r.value) + "," + format_fixed(r.avg_accuracy) + "\n";
  }
  return out;
}

void render_grid(const TwoHeadModel& model, const ExperimentSpec& spec, const fs::path& out_dir) {
  validate(spec);
  const Scenario scenario = build_scenario(spec.data, spec.train.seed);
  if (model.input_width != scenario.source.features.cols()) {
    throw DimensionError("model input width " + std::to_string(model.input_width) +
                         " does not match scenario dimension " +
                         std::to_string(scenario.source.features.cols()));
  }
  const double delta = resolve_delta(spec.train, model.num_classes);
  const BoundaryGrid grid = boundary_grid(model, spec.grid_bounds, spec.grid_resolution, delta);
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "boundary.csv", boundary_csv(grid));
  write_file_atomic(out_dir / "boundary.svg", boundary_svg(grid, &scenario.source, &scenario.target));
}

SelftestResult selftest(std::uint64_t seed) {
  SelftestResult result;
  auto report = [&](bool ok, const std::string& line) {
    result.lines.push_back(std::string(ok ? "ok   " : "FAIL ") + line);
    result.passed = result.passed && ok;
  };

  Xoshiro256pp rng(derive_seed(seed, "selftest-pairs"));
  double worst_identity = 0.0;
  double worst_ent_excess = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(19);
    std::vector<double> p1(k), p2(k);
    for (auto* p : {&p1, &p2}) {
      double sum = 0.0;
      for (double& v : *p) sum += v = std::exp(2.0 * rng.normal());
      for (double& v : *p) v /= sum;
    }
    const ProbPair pair{p1, p2};
    const CrsEnt ce = crs_ent(pair);
    const double sym = kl(p1, p2) + kl(p2, p1);
    worst_identity = std::max(worst_identity, std::abs(sym - (ce.crs - ce.ent)));
    worst_ent_excess = std::max(worst_ent_excess, ce.ent - 2.0 * std::log(static_cast<double>(k)));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "symmetric KL = crs - ent over 1000 pairs (max error %.3g)",
                worst_identity);
  report(worst_identity < 1e-10, buf);
  std::snprintf(buf, sizeof buf, "ent <= 2 ln|C| (max excess %.3g)", worst_ent_excess);
  report(worst_ent_excess <= 1e-12, buf);

  const std::vector<std::size_t> widths{2, 8, 8, 8};
  TwoHeadModel model = init_model(widths, 3, derive_seed(seed, "selftest-model"));
  Xoshiro256pp data_rng(derive_seed(seed, "selftest-data"));
  Tensor2D xs(4, 2), xt(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      xs(i, j) = 2.0 * data_rng.normal();
      xt(i, j) = 2.0 * data_rng.normal();
    }
  }
  const SourceBatch batch{xs, {0, 1, 2, 1}};
  const std::vector<std::size_t> selected{0, 2, 3};
  const std::vector<std::size_t> all_rows{0, 1, 2, 3};
  const SeparationParams sep{0.3, 0.1};

  struct Case {
    const char* name;
    Objective objective;
  };
  const Case cases[] = {
      {"source loss", [&](TwoHeadModel& m, bool a) { return objective_source(m, batch, selected, 0.1, a); }},
      {"supervised loss", [&](TwoHeadModel& m, bool a) { return objective_source(m, batch, all_rows, 0.0, a); }},
      {"separation loss", [&](TwoHeadModel& m, bool a) { return objective_separation(m, xt, sep, {1, 1}, a); }},
      {"separation, crs only", [&](TwoHeadModel& m, bool a) { return objective_separation(m, xt, sep, {1, 0}, a); }},
      {"separation, ent only", [&](TwoHeadModel& m, bool a) { return objective_separation(m, xt, sep, {0, 1}, a); }},
      {"separation, symmetric KL", [&](TwoHeadModel& m, bool a) { return objective_separation(m, xt, sep, {1, -1}, a); }},
      {"discrepancy", [&](TwoHeadModel& m, bool a) { return objective_discrepancy(m, batch, selected, xt, 0.1, a); }},
      {"alignment", [&](TwoHeadModel& m, bool a) { return objective_alignment(m, xt, all_rows, a); }},
  };
  for (const Case& c : cases) {
    const GradCheckReport r = grad_check(model, c.objective, 1e-5, 1e-4);
    std::snprintf(buf, sizeof buf, "gradient check: %s (max rel. error %.3g over %zu parameters)",
                  c.name, r.max_relative_error, r.parameters_checked);
    report(r.passed, buf);
  }
  return result;
}

}  // namespace divopt
