#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divopt/tensor.hpp"

namespace divopt {

enum class Activation { ReLU, Identity };

/// Which parameter set an optimizer step may touch.
enum class UpdateScope { All, HeadsOnly, GeneratorOnly };

/// Fully-connected layer y = act(x W^T + b). Gradient and momentum buffers
/// always mirror the parameter shapes.
struct DenseLayer {
  Tensor2D weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::ReLU;
  Tensor2D grad_weight;
  std::vector<double> grad_bias;
  Tensor2D velocity_weight;
  std::vector<double> velocity_bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in_width, std::size_t out_width, Activation act);

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }
};

/// Shared feature generator G followed by two classifier heads F1, F2 with
/// identical shapes. Each head is three layers ending in |C_s| logits.
struct TwoHeadModel {
  std::vector<DenseLayer> generator;
  std::vector<DenseLayer> head1;
  std::vector<DenseLayer> head2;
  std::size_t input_width = 0;
  std::size_t num_classes = 0;
  // Bumped on every parameter update; forward caches record it.
  std::uint64_t version = 0;
};

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
};

/// Builds G as a chain over `layer_widths` (ReLU throughout) and two heads of
/// shape width -> width -> width -> num_classes, where width is the last
/// generator width. Weights are Glorot-uniform, biases zero; G, F1 and F2
/// draw from distinct sub-seeds of `seed`.
TwoHeadModel init_model(std::span<const std::size_t> layer_widths, std::size_t num_classes,
                        std::uint64_t seed);

struct LayerTrace {
  Tensor2D input;
  Tensor2D pre_activation;
};

struct ForwardCache {
  std::vector<LayerTrace> generator;
  std::vector<LayerTrace> head1;
  std::vector<LayerTrace> head2;
  Tensor2D p1;
  Tensor2D p2;
  std::uint64_t model_version = 0;
};

/// Class probabilities of both heads plus everything backward() needs.
struct ForwardPass {
  Tensor2D p1;
  Tensor2D p2;
  ForwardCache cache;
};

/// Max-subtracted softmax. Throws NumericError on non-finite logits.
std::vector<double> softmax(std::span<const double> logits);

ForwardPass forward(const TwoHeadModel& model, const Tensor2D& x);

/// Accumulates dLoss/dtheta into the gradient buffers given dLoss/dp1 and
/// dLoss/dp2 (both batch x classes). The generator receives the sum of both
/// heads' contributions. Throws UsageError if the model changed since the
/// forward pass that produced `cache`.
void backward(TwoHeadModel& model, const ForwardCache& cache, const Tensor2D& d_p1,
              const Tensor2D& d_p2);

/// Momentum SGD (v <- mu v + g; theta <- theta - lr v) on the parameters in
/// `scope`; everything outside the scope is left untouched. All gradients are
/// zeroed afterwards.
void sgd_step(TwoHeadModel& model, const SgdConfig& config, UpdateScope scope);

void zero_gradients(TwoHeadModel& model);

/// Views over every parameter block, in serialization order
/// (generator, head1, head2; weight before bias).
std::vector<std::span<double>> parameter_blocks(TwoHeadModel& model);
std::vector<std::span<double>> gradient_blocks(TwoHeadModel& model);
std::size_t parameter_count(const TwoHeadModel& model);

/// CSV `layer,row,col,value` with names like `head1.2.weight`; values use
/// 17 significant digits so parse_parameters() restores them exactly.
std::string serialize_parameters(const TwoHeadModel& model);
TwoHeadModel parse_parameters(std::string_view csv);

}  // namespace divopt
