#include "divopt/trainer.hpp"

#include <cmath>
#include <string>
#include <cstdio>
#include <numeric>

#include "divopt/errors.hpp"
#include "divopt/rng.hpp"

namespace divopt {

namespace {

SgdConfig sgd_of(const TrainConfig& config) { return {config.learning_rate, config.momentum}; }

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void apply(TwoHeadModel& model, const ForwardPass& pass, const LossGrad& grad) {
  backward(model, pass.cache, grad.d_p1, grad.d_p2);
}

struct ObserverScope {
  TrainObserver* observer;
  StepKind kind;
  const TwoHeadModel& model;
  ObserverScope(TrainObserver* o, StepKind k, const TwoHeadModel& m) : observer(o), kind(k), model(m) {
    if (observer) observer->before_step(kind, model);
  }
  ~ObserverScope() {
    if (observer) observer->after_step(kind, model);
  }
  ObserverScope(const ObserverScope&) = delete;
  ObserverScope& operator=(const ObserverScope&) = delete;
};

void require_finite(double value, StepKind step, std::size_t epoch) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss in step " + std::string(to_string(step)) + " at epoch " +
                       std::to_string(epoch));
  }
}

// Adds the step and epoch to numeric failures raised inside a step (for
// example a non-finite softmax input after parameters overflow).
template <class F>
auto guarded(StepKind step, std::size_t epoch, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError("non-finite value in step " + std::string(to_string(step)) + " at epoch " +
                       std::to_string(epoch) + ": " + e.what());
  }
}

}  // namespace

void validate(const TrainConfig& c) {
  if (!(c.alpha >= 0.0)) throw ConfigError("alpha: drop fraction must be >= 0");
  if (!(c.alpha < 1.0)) throw ConfigError("alpha: drop fraction must be < 1");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda: must be >= 0");
  if (c.delta && !(*c.delta > 0.0 && std::isfinite(*c.delta))) throw ConfigError("delta: must be > 0");
  if (!(c.margin >= 0.0) || !std::isfinite(c.margin)) throw ConfigError("margin: must be >= 0");
  if (c.n_inner < 1) throw ConfigError("n_inner: must be >= 1");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate: must be > 0");
  }
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum: must be in [0, 1)");
  if (c.batch_size < 2) throw ConfigError("batch_size: must be >= 2");
  if (c.epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (c.hidden_width < 1) throw ConfigError("hidden_width: must be >= 1");
}

double resolve_delta(const TrainConfig& config, std::size_t num_classes) {
  return config.delta.value_or(std::log(static_cast<double>(num_classes)));
}

Objectives objectives_for(const TrainConfig& config, std::size_t num_classes) {
  return variant_objectives(config.variant, config.alpha, config.lambda,
                            {resolve_delta(config, num_classes), config.margin});
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::A1: return "A-1";
    case StepKind::A2: return "A-2";
    case StepKind::B: return "B";
    case StepKind::C: return "C";
  }
  return "?";
}

double objective_source(TwoHeadModel& model, const SourceBatch& batch,
                        std::span<const std::size_t> selected, double lambda, bool accumulate) {
  const ForwardPass pass = forward(model, batch.x);
  const LossGrad g = source_loss_grad(pass.p1, pass.p2, batch.labels, selected, lambda);
  if (accumulate) apply(model, pass, g);
  return g.value;
}

double objective_separation(TwoHeadModel& model, const Tensor2D& target_x,
                            const SeparationParams& params, const SeparationWeights& weights,
                            bool accumulate) {
  const ForwardPass pass = forward(model, target_x);
  const LossGrad g = separation_loss_grad(pass.p1, pass.p2, params, weights);
  if (accumulate) apply(model, pass, g);
  return g.value;
}

double objective_discrepancy(TwoHeadModel& model, const SourceBatch& batch,
                             std::span<const std::size_t> selected, const Tensor2D& target_x,
                             double lambda, bool accumulate) {
  const double source = objective_source(model, batch, selected, lambda, accumulate);
  const ForwardPass pass = forward(model, target_x);
  const auto rows = all_rows(target_x.rows());
  const LossGrad g = crs_mean_grad(pass.p1, pass.p2, rows, -1.0);
  if (accumulate) apply(model, pass, g);
  return source + g.value;
}

double objective_alignment(TwoHeadModel& model, const Tensor2D& target_x,
                           std::span<const std::size_t> common_rows, bool accumulate) {
  const ForwardPass pass = forward(model, target_x);
  const LossGrad g = crs_mean_grad(pass.p1, pass.p2, common_rows);
  if (accumulate && !common_rows.empty()) apply(model, pass, g);
  return g.value;
}

StepA1Result step_a1(TwoHeadModel& model, const SourceBatch& batch, const TrainConfig& config,
                     TrainObserver* observer) {
  ObserverScope scope(observer, StepKind::A1, model);
  const Objectives obj = objectives_for(config, model.num_classes);
  const ForwardPass pass = forward(model, batch.x);
  const SourceLoss per = source_loss(pass.p1, pass.p2, batch.labels, obj.lambda);

  StepA1Result result;
  result.selected = small_loss_select(per.per_sample, obj.alpha);
  if (result.selected.empty()) throw std::logic_error("small-loss selection returned no samples");

  const LossGrad g = source_loss_grad(pass.p1, pass.p2, batch.labels, result.selected, obj.lambda);
  result.loss = g.value;
  for (std::size_t r : result.selected) {
    const auto y = static_cast<std::size_t>(batch.labels[r]);
    result.sup += -std::log(std::max(pass.p1(r, y), kProbFloor)) -
                  std::log(std::max(pass.p2(r, y), kProbFloor));
    result.skld += kl(pass.p1.row(r), pass.p2.row(r)) + kl(pass.p2.row(r), pass.p1.row(r));
  }
  result.sup /= static_cast<double>(result.selected.size());
  result.skld /= static_cast<double>(result.selected.size());

  apply(model, pass, g);
  sgd_step(model, sgd_of(config), UpdateScope::All);
  return result;
}

double step_a2(TwoHeadModel& model, const Tensor2D& target_x, const TrainConfig& config,
               TrainObserver* observer) {
  const Objectives obj = objectives_for(config, model.num_classes);
  if (!obj.run_separation) return 0.0;
  ObserverScope scope(observer, StepKind::A2, model);
  const double loss = objective_separation(model, target_x, obj.separation, obj.weights, true);
  sgd_step(model, sgd_of(config), UpdateScope::All);
  return loss;
}

double step_b(TwoHeadModel& model, const SourceBatch& batch, std::span<const std::size_t> selected,
              const Tensor2D& target_x, const TrainConfig& config, TrainObserver* observer) {
  const Objectives obj = objectives_for(config, model.num_classes);
  if (!obj.run_minimax) return 0.0;
  ObserverScope scope(observer, StepKind::B, model);
  const double loss = objective_discrepancy(model, batch, selected, target_x, obj.lambda, true);
  sgd_step(model, sgd_of(config), UpdateScope::HeadsOnly);
  return loss;
}

StepCResult step_c(TwoHeadModel& model, const Tensor2D& target_x, const TrainConfig& config,
                   TrainObserver* observer) {
  const Objectives obj = objectives_for(config, model.num_classes);
  StepCResult result;
  if (!obj.run_minimax) return result;
  for (std::size_t rep = 0; rep < config.n_inner; ++rep) {
    ObserverScope scope(observer, StepKind::C, model);
    const ForwardPass pass = forward(model, target_x);
    const auto mask = common_mask(pass.p1, pass.p2, obj.separation);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (mask[r]) rows.push_back(r);
    }
    if (rows.empty()) continue;
    const LossGrad g = crs_mean_grad(pass.p1, pass.p2, rows);
    apply(model, pass, g);
    sgd_step(model, sgd_of(config), UpdateScope::GeneratorOnly);
    result.loss += g.value;
    ++result.updates;
  }
  if (result.updates > 0) result.loss /= static_cast<double>(result.updates);
  return result;
}

TrainState train(const DomainDataset& source, const DomainDataset& target,
                 const TrainConfig& config, TrainObserver* observer) {
  validate(config);
  const std::size_t num_classes = source.source_class_count();
  if (num_classes < 2) throw ConfigError("source domain needs at least 2 classes");
  if (source.features.cols() != target.features.cols()) {
    throw ConfigError("source and target feature dimensions differ");
  }
  if (source.observed_labels.size() != source.size()) {
    throw ConfigError("source dataset is missing observed labels");
  }
  for (int y : source.observed_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ConfigError("source label " + std::to_string(y) + " is not a source class");
    }
  }

  const std::size_t width = config.hidden_width;
  const std::vector<std::size_t> widths{source.features.cols(), width, width, width};
  TrainState state;
  state.model = init_model(widths, num_classes, derive_seed(config.seed, "model"));

  const std::uint64_t source_stream = derive_seed(config.seed, "batching-source");
  const std::uint64_t target_stream = derive_seed(config.seed, "batching-target");
  const bool uses_target = config.variant != MethodVariant::SourceOnly;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto source_batches = minibatches(source.size(), config.batch_size, source_stream, epoch);
    std::vector<std::vector<std::size_t>> target_batches;
    std::size_t iterations = source_batches.size();
    if (uses_target) {
      target_batches = minibatches(target.size(), config.batch_size, target_stream, epoch);
      iterations = std::min(iterations, target_batches.size());
    }
    if (iterations == 0) throw ConfigError("batch_size: larger than a domain's sample count");

    EpochTrace row;
    row.epoch = epoch;
    std::size_t c_iterations = 0;
    std::size_t selected_total = 0;
    std::size_t selected_clean = 0;

    for (std::size_t it = 0; it < iterations; ++it) {
      const auto& sidx = source_batches[it];
      SourceBatch batch{source.features.select_rows(sidx), {}};
      batch.labels.reserve(sidx.size());
      for (std::size_t i : sidx) batch.labels.push_back(source.observed_labels[i]);

      const StepA1Result a1 =
          guarded(StepKind::A1, epoch, [&] { return step_a1(state.model, batch, config, observer); });
      require_finite(a1.loss, StepKind::A1, epoch);
      row.loss_sup += a1.sup;
      row.loss_skld += a1.skld;
      for (std::size_t r : a1.selected) {
        ++selected_total;
        // Diagnostic only: ground truth never reaches a gradient.
        if (source.observed_labels[sidx[r]] == source.true_labels[sidx[r]]) ++selected_clean;
      }

      if (uses_target) {
        const Tensor2D target_x = target.features.select_rows(target_batches[it]);
        const double sep =
            guarded(StepKind::A2, epoch, [&] { return step_a2(state.model, target_x, config, observer); });
        require_finite(sep, StepKind::A2, epoch);
        row.loss_sep += sep;

        const double b = guarded(StepKind::B, epoch, [&] {
          return step_b(state.model, batch, a1.selected, target_x, config, observer);
        });
        require_finite(b, StepKind::B, epoch);
        row.loss_b += b;

        const StepCResult c =
            guarded(StepKind::C, epoch, [&] { return step_c(state.model, target_x, config, observer); });
        require_finite(c.loss, StepKind::C, epoch);
        if (c.updates > 0) {
          row.loss_c += c.loss;
          ++c_iterations;
        }
      }
      ++state.step_counter;
    }

    const auto n = static_cast<double>(iterations);
    row.step = state.step_counter;
    row.loss_sup /= n;
    row.loss_skld /= n;
    row.loss_sep /= n;
    row.loss_b /= n;
    if (c_iterations > 0) row.loss_c /= static_cast<double>(c_iterations);
    row.clean_fraction_selected =
        selected_total == 0 ? 0.0 : static_cast<double>(selected_clean) / static_cast<double>(selected_total);
    state.trace.push_back(row);
  }
  return state;
}

std::string trace_csv(std::span<const EpochTrace> trace) {
  std::string out = "epoch,step,loss_sup,loss_skld,loss_sep,loss_b,loss_c,clean_fraction_selected\n";
  char buf[320];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.step,
                  r.loss_sup, r.loss_skld, r.loss_sep, r.loss_b, r.loss_c, r.clean_fraction_selected);
    out += buf;
  }
  return out;
}

}  // namespace divopt
