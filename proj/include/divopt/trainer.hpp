#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divopt/losses.hpp"
#include "divopt/nn.hpp"
#include "divopt/synth.hpp"

namespace divopt {

struct TrainConfig {
  double alpha = 0.2;            // dropped fraction in small-loss selection
  double lambda = 0.1;           // weight of the symmetric KL on source samples
  std::optional<double> delta;   // separation / rejection threshold; ln |C_s| when unset
  double margin = 1.0;
  std::size_t n_inner = 4;       // Step C repeats per mini-batch
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 7;
  MethodVariant variant = MethodVariant::Full;
  std::size_t hidden_width = 32;

  bool operator==(const TrainConfig&) const = default;
};

/// Throws ConfigError naming the offending field.
void validate(const TrainConfig& config);

double resolve_delta(const TrainConfig& config, std::size_t num_classes);

Objectives objectives_for(const TrainConfig& config, std::size_t num_classes);

enum class StepKind { A1, A2, B, C };

std::string_view to_string(StepKind kind);

/// Hooks invoked around every optimizer step (each Step C repeat counts as
/// one step, including repeats skipped for an empty common set). Steps the
/// variant disables are not reported.
class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual void before_step(StepKind, const TwoHeadModel&) {}
  virtual void after_step(StepKind, const TwoHeadModel&) {}
};

struct SourceBatch {
  Tensor2D x;
  std::vector<int> labels;
};

// Objectives as functions of the model, used by the steps and by gradient
// checks. With `accumulate` set they also add their gradients to the model.

/// Mean source loss (supervised + lambda * SKLD) over the `selected` rows.
double objective_source(TwoHeadModel& model, const SourceBatch& batch,
                        std::span<const std::size_t> selected, double lambda, bool accumulate);

/// Weighted separation loss over the whole target batch.
double objective_separation(TwoHeadModel& model, const Tensor2D& target_x,
                            const SeparationParams& params, const SeparationWeights& weights,
                            bool accumulate);

/// Source loss on `selected` minus the mean crs divergence over the target
/// batch (the classifiers' discriminator objective).
double objective_discrepancy(TwoHeadModel& model, const SourceBatch& batch,
                             std::span<const std::size_t> selected, const Tensor2D& target_x,
                             double lambda, bool accumulate);

/// Mean crs divergence over the target rows in `common_rows`.
double objective_alignment(TwoHeadModel& model, const Tensor2D& target_x,
                           std::span<const std::size_t> common_rows, bool accumulate);

struct StepA1Result {
  double loss = 0.0;
  double sup = 0.0;   // supervised part over the selection
  double skld = 0.0;  // symmetric KL over the selection
  std::vector<std::size_t> selected;
};

/// Small-loss selection followed by one update of G, F1, F2 on the selected
/// samples.
StepA1Result step_a1(TwoHeadModel& model, const SourceBatch& batch, const TrainConfig& config,
                     TrainObserver* observer = nullptr);

/// One update of G, F1, F2 on the separation loss; a no-op for variants
/// without separation.
double step_a2(TwoHeadModel& model, const Tensor2D& target_x, const TrainConfig& config,
               TrainObserver* observer = nullptr);

/// One heads-only update that raises target divergence while fitting the
/// selected source samples.
double step_b(TwoHeadModel& model, const SourceBatch& batch, std::span<const std::size_t> selected,
              const Tensor2D& target_x, const TrainConfig& config,
              TrainObserver* observer = nullptr);

struct StepCResult {
  double loss = 0.0;        // mean objective over the repeats that updated
  std::size_t updates = 0;  // repeats with a nonempty common set
};

/// n_inner generator-only updates lowering crs divergence on the detected
/// common target samples, re-detected before each repeat.
StepCResult step_c(TwoHeadModel& model, const Tensor2D& target_x, const TrainConfig& config,
                   TrainObserver* observer = nullptr);

struct EpochTrace {
  std::size_t epoch = 0;
  std::size_t step = 0;  // mini-batch iterations completed so far
  double loss_sup = 0.0;
  double loss_skld = 0.0;
  double loss_sep = 0.0;
  double loss_b = 0.0;
  double loss_c = 0.0;  // 0 when no Step C update ran in the epoch
  double clean_fraction_selected = 0.0;
};

struct TrainState {
  TwoHeadModel model;
  std::size_t step_counter = 0;
  std::vector<EpochTrace> trace;
};

/// Runs the full schedule: per epoch, paired source/target mini-batches each
/// go through A-1, A-2, B and C x n_inner (filtered by the variant).
/// Throws NumericError naming the step and epoch if a loss turns non-finite.
TrainState train(const DomainDataset& source, const DomainDataset& target,
                 const TrainConfig& config, TrainObserver* observer = nullptr);

/// CSV `epoch,step,loss_sup,loss_skld,loss_sep,loss_b,loss_c,clean_fraction_selected`.
std::string trace_csv(std::span<const EpochTrace> trace);

}  // namespace divopt
