#include "divopt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "divopt/errors.hpp"
#include "divopt/rng.hpp"

namespace divopt {

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void append_rows(Tensor2D& dst, const Tensor2D& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  std::vector<double> data(dst.data().begin(), dst.data().end());
  data.insert(data.end(), src.data().begin(), src.data().end());
  dst = Tensor2D(dst.rows() + src.rows(), dst.cols(), std::move(data));
}

}  // namespace

std::string_view to_string(ClassRole role) {
  switch (role) {
    case ClassRole::Common: return "common";
    case ClassRole::SourcePrivate: return "source_private";
    case ClassRole::TargetPrivate: return "target_private";
  }
  return "?";
}

std::string_view to_string(NoiseKind kind) {
  return kind == NoiseKind::PairFlip ? "pair" : "symmetric";
}

std::size_t DomainDataset::source_class_count() const {
  return static_cast<std::size_t>(std::count_if(class_roles.begin(), class_roles.end(), [](ClassRole r) {
    return r != ClassRole::TargetPrivate;
  }));
}

TransitionMatrix make_transition_matrix(const NoiseSpec& spec, std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("transition matrix needs at least 2 classes");
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) throw ConfigError("noise_rate: must lie in [0, 1)");
  const double rho = spec.rate;
  TransitionMatrix t{Tensor2D(num_classes, num_classes)};
  for (std::size_t i = 0; i < num_classes; ++i) {
    t.q(i, i) = 1.0 - rho;
    if (spec.kind == NoiseKind::PairFlip) {
      t.q(i, (i + 1) % num_classes) += rho;
    } else {
      const double off = rho / static_cast<double>(num_classes - 1);
      for (std::size_t j = 0; j < num_classes; ++j) {
        if (j != i) t.q(i, j) = off;
      }
    }
  }
  return t;
}

std::vector<int> inject_noise(std::span<const int> labels, const TransitionMatrix& q,
                              std::uint64_t seed) {
  const std::size_t c = q.q.rows();
  Xoshiro256pp rng(seed);
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("label " + std::to_string(labels[i]) + " outside transition matrix");
    }
    const auto row = q.q.row(static_cast<std::size_t>(labels[i]));
    const double u = rng.uniform01();
    double cum = 0.0;
    std::size_t pick = c - 1;
    for (std::size_t j = 0; j < c; ++j) {
      cum += row[j];
      if (u < cum) {
        pick = j;
        break;
      }
    }
    // Rounding can leave cum just below 1; fall back to the last class with
    // nonzero mass rather than one the matrix forbids.
    if (row[pick] == 0.0) {
      for (std::size_t j = c; j-- > 0;) {
        if (row[j] > 0.0) {
          pick = j;
          break;
        }
      }
    }
    out[i] = static_cast<int>(pick);
  }
  return out;
}

void sample_blobs(const BlobSpec& spec, std::uint64_t seed, int first_label, Tensor2D& features,
                  std::vector<int>& labels) {
  if (spec.centers.empty()) throw ConfigError("blob spec has no centers");
  if (!(spec.stddev > 0.0)) throw ConfigError("blob stddev must be positive");
  const std::size_t dim = spec.centers.front().size();
  for (std::size_t i = 0; i < spec.centers.size(); ++i) {
    if (spec.centers[i].size() != dim || dim == 0) throw ConfigError("blob centers differ in dimension");
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.centers[i] == spec.centers[j]) throw ConfigError("blob centers must be distinct");
    }
  }
  Xoshiro256pp rng(seed);
  features = Tensor2D(spec.centers.size() * spec.samples_per_class, dim);
  labels.assign(features.rows(), 0);
  std::size_t r = 0;
  for (std::size_t k = 0; k < spec.centers.size(); ++k) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
      for (std::size_t d = 0; d < dim; ++d) features(r, d) = rng.normal(spec.centers[k][d], spec.stddev);
      labels[r] = first_label + static_cast<int>(k);
    }
  }
}

ClassSplit class_split(std::size_t total_classes, std::size_t n_common,
                       std::size_t n_source_private, std::size_t n_target_private) {
  if (n_common + n_source_private + n_target_private != total_classes) {
    throw ConfigError("class split " + std::to_string(n_common) + "/" +
                      std::to_string(n_source_private) + "/" + std::to_string(n_target_private) +
                      " does not sum to " + std::to_string(total_classes));
  }
  ClassSplit split;
  split.roles.reserve(total_classes);
  split.roles.insert(split.roles.end(), n_common, ClassRole::Common);
  split.roles.insert(split.roles.end(), n_source_private, ClassRole::SourcePrivate);
  split.roles.insert(split.roles.end(), n_target_private, ClassRole::TargetPrivate);
  if (n_common == 0) split.warnings.emplace_back("class split has no common classes");
  return split;
}

ScenarioSpec toy_scenario_spec() {
  ScenarioSpec spec;
  spec.source_centers = {{-4.0, 0.0}, {4.0, 0.0}, {0.0, 6.0}};
  spec.target_private_centers = {{10.0, -8.0}};
  spec.stddev = 1.0;
  spec.samples_per_class = 300;
  spec.target_shift = {1.0, 1.0};
  spec.n_common = 2;
  spec.noise = {NoiseKind::SymmetricFlip, 0.2};
  return spec;
}

Scenario build_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
  const std::size_t n_source = spec.source_centers.size();
  const std::size_t n_private = spec.target_private_centers.size();
  if (n_source < 2) throw ConfigError("source_centers: need at least 2 source classes");
  if (spec.n_common > n_source) throw ConfigError("n_common: exceeds the number of source classes");
  if (spec.samples_per_class == 0) throw ConfigError("samples_per_class: must be positive");
  if (!(spec.stddev > 0.0)) throw ConfigError("blob_stddev: must be positive");
  const std::size_t dim = spec.source_centers.front().size();
  if (spec.target_shift.size() != dim) throw ConfigError("target_shift: dimension differs from source_centers");
  for (const auto& c : spec.target_private_centers) {
    if (c.size() != dim) throw ConfigError("target_private_centers: dimension differs from source_centers");
    for (const auto& s : spec.source_centers) {
      if (s.size() == dim && distance(c, s) <= 5.0 * spec.stddev) {
        throw ConfigError("target_private_centers: center lies within 5 stddev of a source center");
      }
    }
  }
  if (spec.n_common + n_private == 0) throw ConfigError("n_common: target domain would be empty");

  Scenario out;
  ClassSplit split = class_split(n_source + n_private, spec.n_common, n_source - spec.n_common, n_private);
  out.warnings = split.warnings;

  // Source domain.
  std::vector<int> clean;
  sample_blobs({spec.source_centers, spec.stddev, spec.samples_per_class},
               derive_seed(seed, "source-blobs"), 0, out.source.features, clean);
  const auto q = make_transition_matrix(spec.noise, n_source);
  if (spec.noise.kind == NoiseKind::PairFlip && spec.noise.rate >= 0.5) {
    out.warnings.emplace_back("pair-flip noise rate >= 0.5 makes the true class a minority");
  }
  out.source.observed_labels = inject_noise(clean, q, derive_seed(seed, "noise"));
  out.source.true_labels = std::move(clean);
  out.source.class_roles = split.roles;

  // Target domain: shifted common classes followed by the private ones.
  std::vector<std::vector<double>> target_centers;
  for (std::size_t k = 0; k < spec.n_common; ++k) {
    auto c = spec.source_centers[k];
    for (std::size_t d = 0; d < dim; ++d) c[d] += spec.target_shift[d];
    target_centers.push_back(std::move(c));
  }
  Tensor2D private_features;
  std::vector<int> private_labels;
  if (!target_centers.empty()) {
    sample_blobs({target_centers, spec.stddev, spec.samples_per_class},
                 derive_seed(seed, "target-common-blobs"), 0, out.target.features,
                 out.target.true_labels);
  }
  if (n_private > 0) {
    sample_blobs({spec.target_private_centers, spec.stddev, spec.samples_per_class},
                 derive_seed(seed, "target-private-blobs"), static_cast<int>(n_source),
                 private_features, private_labels);
    append_rows(out.target.features, private_features);
    out.target.true_labels.insert(out.target.true_labels.end(), private_labels.begin(),
                                  private_labels.end());
  }
  out.target.class_roles = split.roles;
  return out;
}

Scenario build_toy_scenario(std::uint64_t seed) { return build_scenario(toy_scenario_spec(), seed); }

std::vector<std::vector<std::size_t>> minibatches(std::size_t dataset_size, std::size_t batch_size,
                                                  std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  Xoshiro256pp rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = dataset_size; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + batch_size <= dataset_size; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

std::string dataset_csv(const DomainDataset& source, const DomainDataset& target) {
  std::string out = "x0,x1,observed_label,true_label,role,domain\n";
  char buf[160];
  auto emit = [&](const DomainDataset& ds, bool is_source) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double x0 = ds.features(i, 0);
      const double x1 = ds.features.cols() > 1 ? ds.features(i, 1) : 0.0;
      const int truth = ds.true_labels[i];
      const auto role = to_string(ds.class_roles.at(static_cast<std::size_t>(truth)));
      if (is_source) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%d,%s,source\n", x0, x1, ds.observed_labels[i],
                      truth, std::string(role).c_str());
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,,%d,%s,target\n", x0, x1, truth,
                      std::string(role).c_str());
      }
      out += buf;
    }
  };
  emit(source, true);
  emit(target, false);
  return out;
}

}  // namespace divopt
