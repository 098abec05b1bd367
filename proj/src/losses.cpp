#include "divopt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "divopt/errors.hpp"

namespace divopt {

namespace {

double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }

// d/dp log(max(p, floor)).
double clamped_log_deriv(double p) { return p > kProbFloor ? 1.0 / p : 0.0; }

void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("probability vectors differ in length: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
}

void require_same_shape(const Tensor2D& p1, const Tensor2D& p2) {
  if (p1.rows() != p2.rows() || p1.cols() != p2.cols()) {
    throw DimensionError("head probability batches differ in shape");
  }
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) throw DimensionError("label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// Gradients of crs = H(p1,p2) + H(p2,p1) w.r.t. p1 and p2, scaled by `w`.
void add_crs_grad(std::span<const double> p1, std::span<const double> p2, double w,
                  std::span<double> g1, std::span<double> g2) {
  for (std::size_t k = 0; k < p1.size(); ++k) {
    g1[k] += w * (-clamped_log(p2[k]) - p2[k] * clamped_log_deriv(p1[k]));
    g2[k] += w * (-clamped_log(p1[k]) - p1[k] * clamped_log_deriv(p2[k]));
  }
}

// Gradients of ent = H(p1) + H(p2), scaled by `w`.
void add_ent_grad(std::span<const double> p1, std::span<const double> p2, double w,
                  std::span<double> g1, std::span<double> g2) {
  for (std::size_t k = 0; k < p1.size(); ++k) {
    g1[k] += w * (-clamped_log(p1[k]) - p1[k] * clamped_log_deriv(p1[k]));
    g2[k] += w * (-clamped_log(p2[k]) - p2[k] * clamped_log_deriv(p2[k]));
  }
}

// Gradients of kl(p1,p2) + kl(p2,p1), scaled by `w`.
void add_skl_grad(std::span<const double> p1, std::span<const double> p2, double w,
                  std::span<double> g1, std::span<double> g2) {
  add_crs_grad(p1, p2, w, g1, g2);
  add_ent_grad(p1, p2, -w, g1, g2);
}

// Subgradient of separation_term w.r.t. its argument.
double separation_term_deriv(double value, const SeparationParams& params) {
  const double diff = value - params.delta;
  if (std::abs(diff) <= params.margin) return 0.0;
  return diff > 0.0 ? -1.0 : 1.0;
}

}  // namespace

double kl(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q);
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    total += p[k] * (clamped_log(p[k]) - clamped_log(q[k]));
  }
  return total;
}

double cross_entropy(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q);
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) total -= p[k] * clamped_log(q[k]);
  return total;
}

double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) total -= v * clamped_log(v);
  return total;
}

CrsEnt crs_ent(const ProbPair& pair) {
  require_same_length(pair.p1, pair.p2);
  return {cross_entropy(pair.p1, pair.p2) + cross_entropy(pair.p2, pair.p1),
          entropy(pair.p1) + entropy(pair.p2)};
}

double joint_divergence(const ProbPair& pair) {
  const CrsEnt ce = crs_ent(pair);
  return ce.crs + ce.ent;
}

double skld(const Tensor2D& p1, const Tensor2D& p2) {
  require_same_shape(p1, p2);
  if (p1.rows() == 0) throw UsageError("skld of an empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < p1.rows(); ++r) total += kl(p1.row(r), p2.row(r)) + kl(p2.row(r), p1.row(r));
  return total / static_cast<double>(p1.rows());
}

double supervised_loss(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels) {
  return source_loss(p1, p2, labels, 0.0).total;
}

SourceLoss source_loss(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels,
                       double lambda) {
  require_same_shape(p1, p2);
  check_labels(labels, p1.rows(), p1.cols());
  if (p1.rows() == 0) throw UsageError("source loss of an empty batch");
  SourceLoss out{0.0, std::vector<double>(p1.rows())};
  for (std::size_t r = 0; r < p1.rows(); ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    double v = -clamped_log(p1(r, y)) - clamped_log(p2(r, y));
    if (lambda != 0.0) v += lambda * (kl(p1.row(r), p2.row(r)) + kl(p2.row(r), p1.row(r)));
    out.per_sample[r] = v;
    out.total += v;
  }
  out.total /= static_cast<double>(p1.rows());
  return out;
}

std::vector<std::size_t> small_loss_select(std::span<const double> per_sample_losses,
                                           double alpha) {
  if (per_sample_losses.empty()) throw UsageError("small-loss selection on an empty batch");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  const std::size_t n = per_sample_losses.size();
  // The 1e-9 slack stops products like 0.9 * 10 from rounding up past k.
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return per_sample_losses[a] < per_sample_losses[b];
  });
  order.resize(std::max<std::size_t>(keep, 1));
  std::sort(order.begin(), order.end());
  return order;
}

double separation_term(double value, const SeparationParams& params) {
  const double dist = std::abs(value - params.delta);
  return dist > params.margin ? -dist : 0.0;
}

double separation_loss(const Tensor2D& p1, const Tensor2D& p2, const SeparationParams& params,
                       const SeparationWeights& weights) {
  require_same_shape(p1, p2);
  if (p1.rows() == 0) throw UsageError("separation loss of an empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < p1.rows(); ++r) {
    const CrsEnt ce = crs_ent({p1.row(r), p2.row(r)});
    total += weights.crs * separation_term(ce.crs, params) + weights.ent * separation_term(ce.ent, params);
  }
  return total / static_cast<double>(p1.rows());
}

std::vector<bool> common_mask(const Tensor2D& p1, const Tensor2D& p2,
                              const SeparationParams& params) {
  require_same_shape(p1, p2);
  std::vector<bool> mask(p1.rows());
  for (std::size_t r = 0; r < p1.rows(); ++r) {
    mask[r] = crs_ent({p1.row(r), p2.row(r)}).crs < params.delta - params.margin;
  }
  return mask;
}

bool reject_unknown(double l_crs, double delta) { return l_crs > delta; }

std::string_view to_string(MethodVariant variant) {
  switch (variant) {
    case MethodVariant::Full: return "Full";
    case MethodVariant::SourceOnly: return "SourceOnly";
    case MethodVariant::NoSelect: return "NoSelect";
    case MethodVariant::NoDiv: return "NoDiv";
    case MethodVariant::NoCrs: return "NoCrs";
    case MethodVariant::NoEnt: return "NoEnt";
    case MethodVariant::NoSep: return "NoSep";
    case MethodVariant::NoMinimax: return "NoMinimax";
    case MethodVariant::WithKL: return "WithKL";
  }
  return "?";
}

std::optional<MethodVariant> parse_variant(std::string_view name) {
  for (MethodVariant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  return std::nullopt;
}

Objectives variant_objectives(MethodVariant variant, double alpha, double lambda,
                              const SeparationParams& separation) {
  Objectives obj{alpha, lambda, separation, {}, true, true};
  switch (variant) {
    case MethodVariant::Full: break;
    case MethodVariant::SourceOnly:
      obj.alpha = 0.0;
      obj.lambda = 0.0;
      obj.weights = {0.0, 0.0};
      obj.run_separation = false;
      obj.run_minimax = false;
      break;
    case MethodVariant::NoSelect: obj.alpha = 0.0; break;
    case MethodVariant::NoDiv: obj.lambda = 0.0; break;
    case MethodVariant::NoCrs: obj.weights.crs = 0.0; break;
    case MethodVariant::NoEnt: obj.weights.ent = 0.0; break;
    case MethodVariant::NoSep:
      obj.weights = {0.0, 0.0};
      obj.run_separation = false;
      break;
    case MethodVariant::NoMinimax: obj.run_minimax = false; break;
    case MethodVariant::WithKL: obj.weights.ent = -1.0; break;
  }
  return obj;
}

LossGrad source_loss_grad(const Tensor2D& p1, const Tensor2D& p2, std::span<const int> labels,
                          std::span<const std::size_t> rows, double lambda) {
  require_same_shape(p1, p2);
  check_labels(labels, p1.rows(), p1.cols());
  if (rows.empty()) throw UsageError("source loss over an empty selection");
  LossGrad out{0.0, Tensor2D(p1.rows(), p1.cols()), Tensor2D(p2.rows(), p2.cols())};
  const double w = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const auto a = p1.row(r);
    const auto b = p2.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    double v = -clamped_log(a[y]) - clamped_log(b[y]);
    auto g1 = out.d_p1.row(r);
    auto g2 = out.d_p2.row(r);
    g1[y] -= w * clamped_log_deriv(a[y]);
    g2[y] -= w * clamped_log_deriv(b[y]);
    if (lambda != 0.0) {
      v += lambda * (kl(a, b) + kl(b, a));
      add_skl_grad(a, b, w * lambda, g1, g2);
    }
    out.value += w * v;
  }
  return out;
}

LossGrad separation_loss_grad(const Tensor2D& p1, const Tensor2D& p2,
                              const SeparationParams& params, const SeparationWeights& weights) {
  require_same_shape(p1, p2);
  if (p1.rows() == 0) throw UsageError("separation loss of an empty batch");
  LossGrad out{0.0, Tensor2D(p1.rows(), p1.cols()), Tensor2D(p2.rows(), p2.cols())};
  const double w = 1.0 / static_cast<double>(p1.rows());
  for (std::size_t r = 0; r < p1.rows(); ++r) {
    const auto a = p1.row(r);
    const auto b = p2.row(r);
    const CrsEnt ce = crs_ent({a, b});
    out.value += w * (weights.crs * separation_term(ce.crs, params) +
                      weights.ent * separation_term(ce.ent, params));
    const double d_crs = weights.crs * separation_term_deriv(ce.crs, params);
    const double d_ent = weights.ent * separation_term_deriv(ce.ent, params);
    if (d_crs != 0.0) add_crs_grad(a, b, w * d_crs, out.d_p1.row(r), out.d_p2.row(r));
    if (d_ent != 0.0) add_ent_grad(a, b, w * d_ent, out.d_p1.row(r), out.d_p2.row(r));
  }
  return out;
}

LossGrad crs_mean_grad(const Tensor2D& p1, const Tensor2D& p2, std::span<const std::size_t> rows,
                       double scale) {
  require_same_shape(p1, p2);
  LossGrad out{0.0, Tensor2D(p1.rows(), p1.cols()), Tensor2D(p2.rows(), p2.cols())};
  if (rows.empty()) return out;
  const double w = scale / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const auto a = p1.row(r);
    const auto b = p2.row(r);
    out.value += w * crs_ent({a, b}).crs;
    add_crs_grad(a, b, w, out.d_p1.row(r), out.d_p2.row(r));
  }
  return out;
}

}  // namespace divopt
