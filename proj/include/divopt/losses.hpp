#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divopt/tensor.hpp"

namespace divopt {

/// Probabilities are clamped to at least this value before any logarithm.
inline constexpr double kProbFloor = 1e-12;

/// Outputs of the two heads for one sample.
struct ProbPair {
  std::span<const double> p1;
  std::span<const double> p2;
};

/// D_KL(p || q) in nats.
double kl(std::span<const double> p, std::span<const double> q);
/// Cross-entropy H(p, q) = -sum p log q.
double cross_entropy(std::span<const double> p, std::span<const double> q);
/// Shannon entropy H(p).
double entropy(std::span<const double> p);

struct CrsEnt {
  double crs;  // H(p1,p2) + H(p2,p1)
  double ent;  // H(p1) + H(p2)
};

CrsEnt crs_ent(const ProbPair& pair);

/// Joint divergence: crs + ent. Large when the heads disagree and are
/// unconfident.
double joint_divergence(const ProbPair& pair);

/// Symmetric KL averaged over the batch rows of (p1, p2).
double skld(const Tensor2D& p1, const Tensor2D& p2);

/// Mean over rows of -log p1(y) - log p2(y).
double supervised_loss(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels);

struct SourceLoss {
  double total;
  std::vector<double> per_sample;
};

/// Supervised loss plus lambda * symmetric KL; per_sample holds each row's
/// own contribution, which drives small-loss selection.
SourceLoss source_loss(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels,
                       double lambda);

/// Indices of the ceil((1 - alpha) N) smallest losses, ascending by index.
/// `alpha` is the dropped fraction. Ties go to the lower index.
std::vector<std::size_t> small_loss_select(std::span<const double> per_sample_losses,
                                           double alpha);

struct SeparationParams {
  double delta;   // threshold
  double margin;  // half-width of the dead band around delta
};

/// -|x - delta| outside [delta - m, delta + m], 0 inside.
double separation_term(double value, const SeparationParams& params);

/// Per-term weights on the separated quantities. {1, 1} is the joint
/// divergence form, {1, -1} the symmetric-KL form, zeros disable a term.
struct SeparationWeights {
  double crs = 1.0;
  double ent = 1.0;
  bool operator==(const SeparationWeights&) const = default;
};

double separation_loss(const Tensor2D& p1, const Tensor2D& p2, const SeparationParams& params,
                       const SeparationWeights& weights = {});

/// True where the sample's crs divergence is below delta - margin.
std::vector<bool> common_mask(const Tensor2D& p1, const Tensor2D& p2,
                              const SeparationParams& params);

/// Unknown (target-private) iff l_crs > delta.
bool reject_unknown(double l_crs, double delta);

enum class MethodVariant {
  Full,
  SourceOnly,
  NoSelect,
  NoDiv,
  NoCrs,
  NoEnt,
  NoSep,
  NoMinimax,
  WithKL,
};

inline constexpr MethodVariant kAllVariants[] = {
    MethodVariant::Full,  MethodVariant::SourceOnly, MethodVariant::NoSelect,
    MethodVariant::NoDiv, MethodVariant::NoCrs,      MethodVariant::NoEnt,
    MethodVariant::NoSep, MethodVariant::NoMinimax,  MethodVariant::WithKL,
};

std::string_view to_string(MethodVariant variant);
std::optional<MethodVariant> parse_variant(std::string_view name);

/// The effective objective set of one method variant.
struct Objectives {
  double alpha = 0.0;
  double lambda = 0.0;
  SeparationParams separation{};
  SeparationWeights weights{};
  bool run_separation = true;  // Step A-2
  bool run_minimax = true;     // Steps B and C
};

Objectives variant_objectives(MethodVariant variant, double alpha, double lambda,
                              const SeparationParams& separation);

/// A batch loss together with its gradient w.r.t. both heads' probabilities.
struct LossGrad {
  double value = 0.0;
  Tensor2D d_p1;
  Tensor2D d_p2;
};

/// Mean per-sample source loss (lambda-weighted) over `rows`.
LossGrad source_loss_grad(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels,
                          std::span<const std::size_t> rows, double lambda);

/// Weighted separation loss over all rows.
LossGrad separation_loss_grad(const Tensor2D& p1, const Tensor2D& p2,
                              const SeparationParams& params, const SeparationWeights& weights);

/// `scale` times the mean crs divergence over `rows`.
LossGrad crs_mean_grad(const Tensor2D& p1, const Tensor2D& p2, std::span<const std::size_t> rows,
                       double scale = 1.0);

}  // namespace divopt
