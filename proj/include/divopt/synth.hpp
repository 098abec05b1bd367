#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divopt/tensor.hpp"

namespace divopt {

enum class ClassRole { Common, SourcePrivate, TargetPrivate };

std::string_view to_string(ClassRole role);

/// Features plus labels of one domain. Source sets carry observed (possibly
/// noisy) labels; target sets leave `observed_labels` empty and keep ground
/// truth in `true_labels` for evaluation only. `class_roles` is indexed by
/// class id over the union of both label sets.
struct DomainDataset {
  Tensor2D features;
  std::vector<int> observed_labels;
  std::vector<int> true_labels;
  std::vector<ClassRole> class_roles;

  std::size_t size() const { return features.rows(); }
  /// |C_s|: classes with role Common or SourcePrivate.
  std::size_t source_class_count() const;
};

enum class NoiseKind { PairFlip, SymmetricFlip };

std::string_view to_string(NoiseKind kind);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::SymmetricFlip;
  double rate = 0.0;
  bool operator==(const NoiseSpec&) const = default;
};

/// Row-stochastic label corruption matrix: q(i, j) = P(observed j | true i).
struct TransitionMatrix {
  Tensor2D q;
};

/// Pair flip moves mass rho to (i + 1) mod C; symmetric flip spreads rho
/// evenly over the other C - 1 classes.
TransitionMatrix make_transition_matrix(const NoiseSpec& spec, std::size_t num_classes);

/// Resamples each label from row Q[label]; deterministic in `seed`.
std::vector<int> inject_noise(std::span<const int> labels, const TransitionMatrix& q,
                              std::uint64_t seed);

struct BlobSpec {
  std::vector<std::vector<double>> centers;
  double stddev = 1.0;
  std::size_t samples_per_class = 0;
};

/// Isotropic Gaussian blobs, samples grouped by class in center order.
/// Labels are `first_label + center index`.
void sample_blobs(const BlobSpec& spec, std::uint64_t seed, int first_label, Tensor2D& features,
                  std::vector<int>& labels);

struct ClassSplit {
  std::vector<ClassRole> roles;
  std::vector<std::string> warnings;
};

/// Lowest ids common, then source-private, then target-private.
ClassSplit class_split(std::size_t total_classes, std::size_t n_common,
                       std::size_t n_source_private, std::size_t n_target_private);

/// Geometry and noise of a blob-based noisy universal adaptation scenario.
/// Source class i is centred at source_centers[i]; the first n_common source
/// classes reappear in the target, shifted by target_shift. Each
/// target_private_centers entry is one extra target-only class.
struct ScenarioSpec {
  std::vector<std::vector<double>> source_centers;
  std::vector<std::vector<double>> target_private_centers;
  double stddev = 1.0;
  std::size_t samples_per_class = 300;
  std::vector<double> target_shift;
  std::size_t n_common = 0;
  NoiseSpec noise;

  bool operator==(const ScenarioSpec&) const = default;
};

/// Three 2-D source blobs (red, blue common; orange source-private), 20%
/// symmetric noise, a shifted copy of the common blobs in the target and one
/// far target-private blob at the lower right.
ScenarioSpec toy_scenario_spec();

struct Scenario {
  DomainDataset source;
  DomainDataset target;
  std::vector<std::string> warnings;
};

/// Throws ConfigError if a target-private centre lies within 5 stddev of a
/// source centre.
Scenario build_scenario(const ScenarioSpec& spec, std::uint64_t seed);

Scenario build_toy_scenario(std::uint64_t seed);

/// Seeded shuffle of [0, dataset_size) cut into full batches; incomplete
/// trailing batches are dropped. The epoch index is mixed into the stream.
std::vector<std::vector<std::size_t>> minibatches(std::size_t dataset_size, std::size_t batch_size,
                                                  std::uint64_t seed, std::size_t epoch);

/// CSV `x0,x1,observed_label,true_label,role,domain` over both domains;
/// target rows leave observed_label empty.
std::string dataset_csv(const DomainDataset& source, const DomainDataset& target);

}  // namespace divopt
