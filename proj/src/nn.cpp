#include "divopt/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "divopt/errors.hpp"
#include "divopt/rng.hpp"

namespace divopt {

namespace {

constexpr std::size_t kHeadDepth = 3;

void glorot_fill(DenseLayer& layer, Xoshiro256pp& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(layer.in_width() + layer.out_width()));
  for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
}

std::vector<DenseLayer> make_head(std::size_t width, std::size_t num_classes, std::uint64_t seed) {
  Xoshiro256pp rng(seed);
  std::vector<DenseLayer> head;
  head.reserve(kHeadDepth);
  head.emplace_back(width, width, Activation::ReLU);
  head.emplace_back(width, width, Activation::ReLU);
  head.emplace_back(width, num_classes, Activation::Identity);
  for (auto& layer : head) glorot_fill(layer, rng);
  return head;
}

LayerTrace dense_forward(const DenseLayer& layer, const Tensor2D& input, Tensor2D& output) {
  const std::size_t n = input.rows();
  const std::size_t in = layer.in_width();
  const std::size_t out = layer.out_width();
  LayerTrace trace{input, Tensor2D(n, out)};
  output = Tensor2D(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = input.row(r).data();
    double* z = trace.pre_activation.row(r).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = layer.weight.row(o).data();
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i];
      z[o] = acc;
    }
    double* y = output.row(r).data();
    for (std::size_t o = 0; o < out; ++o) {
      y[o] = layer.activation == Activation::ReLU ? std::max(z[o], 0.0) : z[o];
    }
  }
  return trace;
}

std::vector<LayerTrace> chain_forward(const std::vector<DenseLayer>& layers, Tensor2D& activ) {
  std::vector<LayerTrace> traces;
  traces.reserve(layers.size());
  for (const auto& layer : layers) {
    Tensor2D next;
    traces.push_back(dense_forward(layer, activ, next));
    activ = std::move(next);
  }
  return traces;
}

Tensor2D softmax_rows(const Tensor2D& logits) {
  Tensor2D p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto probs = softmax(logits.row(r));
    std::copy(probs.begin(), probs.end(), p.row(r).begin());
  }
  return p;
}

// Given dL/dp for softmax outputs p, returns dL/dlogits = p * (g - <p, g>).
Tensor2D softmax_backward(const Tensor2D& p, const Tensor2D& d_p) {
  Tensor2D d_z(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto pr = p.row(r);
    const auto gr = d_p.row(r);
    double dot = 0.0;
    for (std::size_t k = 0; k < pr.size(); ++k) dot += pr[k] * gr[k];
    auto dz = d_z.row(r);
    for (std::size_t k = 0; k < pr.size(); ++k) dz[k] = pr[k] * (gr[k] - dot);
  }
  return d_z;
}

// Backpropagates d_out (gradient w.r.t. the chain's output) through `layers`,
// accumulating parameter gradients; returns the gradient w.r.t. the input.
Tensor2D chain_backward(std::vector<DenseLayer>& layers, const std::vector<LayerTrace>& traces,
                        Tensor2D d_out) {
  for (std::size_t li = layers.size(); li-- > 0;) {
    DenseLayer& layer = layers[li];
    const LayerTrace& trace = traces[li];
    const std::size_t n = trace.input.rows();
    const std::size_t in = layer.in_width();
    const std::size_t out = layer.out_width();
    if (layer.activation == Activation::ReLU) {
      for (std::size_t r = 0; r < n; ++r) {
        const auto z = trace.pre_activation.row(r);
        auto d = d_out.row(r);
        for (std::size_t o = 0; o < out; ++o) {
          if (z[o] <= 0.0) d[o] = 0.0;
        }
      }
    }
    Tensor2D d_in(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      const double* x = trace.input.row(r).data();
      const double* d = d_out.row(r).data();
      double* dx = d_in.row(r).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        layer.grad_bias[o] += g;
        double* gw = layer.grad_weight.row(o).data();
        const double* w = layer.weight.row(o).data();
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += g * x[i];
          dx[i] += g * w[i];
        }
      }
    }
    d_out = std::move(d_in);
  }
  return d_out;
}

void update_layer(DenseLayer& layer, const SgdConfig& config) {
  auto step = [&](std::span<double> param, std::span<double> grad, std::span<double> vel) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      vel[i] = config.momentum * vel[i] + grad[i];
      param[i] -= config.learning_rate * vel[i];
    }
  };
  step(layer.weight.data(), layer.grad_weight.data(), layer.velocity_weight.data());
  step(layer.bias, layer.grad_bias, layer.velocity_bias);
}

void zero_layer_grads(DenseLayer& layer) {
  layer.grad_weight.fill(0.0);
  std::fill(layer.grad_bias.begin(), layer.grad_bias.end(), 0.0);
}

template <typename Model, typename F>
void for_each_group(Model& model, F&& fn) {
  fn("generator", model.generator);
  fn("head1", model.head1);
  fn("head2", model.head2);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DenseLayer::DenseLayer(std::size_t in_width, std::size_t out_width, Activation act)
    : weight(out_width, in_width),
      bias(out_width, 0.0),
      activation(act),
      grad_weight(out_width, in_width),
      grad_bias(out_width, 0.0),
      velocity_weight(out_width, in_width),
      velocity_bias(out_width, 0.0) {}

TwoHeadModel init_model(std::span<const std::size_t> layer_widths, std::size_t num_classes,
                        std::uint64_t seed) {
  if (layer_widths.empty()) throw ConfigError("layer_widths must be nonempty");
  if (std::find(layer_widths.begin(), layer_widths.end(), 0u) != layer_widths.end()) {
    throw ConfigError("layer widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");

  TwoHeadModel model;
  model.input_width = layer_widths.front();
  model.num_classes = num_classes;

  Xoshiro256pp gen_rng(derive_seed(seed, "generator"));
  for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i) {
    model.generator.emplace_back(layer_widths[i], layer_widths[i + 1], Activation::ReLU);
    glorot_fill(model.generator.back(), gen_rng);
  }
  const std::size_t width = layer_widths.back();
  model.head1 = make_head(width, num_classes, derive_seed(seed, "head1"));
  model.head2 = make_head(width, num_classes, derive_seed(seed, "head2"));
  return model;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of empty vector");
  double top = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("softmax input is not finite");
    top = std::max(top, z);
  }
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - top);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

ForwardPass forward(const TwoHeadModel& model, const Tensor2D& x) {
  if (x.cols() != model.input_width) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(model.input_width));
  }
  ForwardPass pass;
  Tensor2D features = x;
  pass.cache.generator = chain_forward(model.generator, features);
  Tensor2D logits1 = features;
  Tensor2D logits2 = features;
  pass.cache.head1 = chain_forward(model.head1, logits1);
  pass.cache.head2 = chain_forward(model.head2, logits2);
  pass.p1 = softmax_rows(logits1);
  pass.p2 = softmax_rows(logits2);
  pass.cache.p1 = pass.p1;
  pass.cache.p2 = pass.p2;
  pass.cache.model_version = model.version;
  return pass;
}

void backward(TwoHeadModel& model, const ForwardCache& cache, const Tensor2D& d_p1,
              const Tensor2D& d_p2) {
  if (cache.model_version != model.version || cache.head1.size() != model.head1.size() ||
      cache.generator.size() != model.generator.size()) {
    throw UsageError("stale forward cache: model was updated after the forward pass");
  }
  if (d_p1.rows() != cache.p1.rows() || d_p1.cols() != cache.p1.cols() ||
      d_p2.rows() != cache.p2.rows() || d_p2.cols() != cache.p2.cols()) {
    throw DimensionError("upstream gradient shape does not match forward output");
  }
  Tensor2D d_feat = chain_backward(model.head1, cache.head1, softmax_backward(cache.p1, d_p1));
  const Tensor2D d_feat2 =
      chain_backward(model.head2, cache.head2, softmax_backward(cache.p2, d_p2));
  auto acc = d_feat.data();
  const auto add = d_feat2.data();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
  chain_backward(model.generator, cache.generator, std::move(d_feat));
}

void sgd_step(TwoHeadModel& model, const SgdConfig& config, UpdateScope scope) {
  if (scope != UpdateScope::HeadsOnly) {
    for (auto& layer : model.generator) update_layer(layer, config);
  }
  if (scope != UpdateScope::GeneratorOnly) {
    for (auto& layer : model.head1) update_layer(layer, config);
    for (auto& layer : model.head2) update_layer(layer, config);
  }
  zero_gradients(model);
  ++model.version;
}

void zero_gradients(TwoHeadModel& model) {
  for_each_group(model, [](std::string_view, std::vector<DenseLayer>& layers) {
    for (auto& layer : layers) zero_layer_grads(layer);
  });
}

std::vector<std::span<double>> parameter_blocks(TwoHeadModel& model) {
  std::vector<std::span<double>> blocks;
  for_each_group(model, [&](std::string_view, std::vector<DenseLayer>& layers) {
    for (auto& layer : layers) {
      blocks.push_back(layer.weight.data());
      blocks.emplace_back(layer.bias);
    }
  });
  return blocks;
}

std::vector<std::span<double>> gradient_blocks(TwoHeadModel& model) {
  std::vector<std::span<double>> blocks;
  for_each_group(model, [&](std::string_view, std::vector<DenseLayer>& layers) {
    for (auto& layer : layers) {
      blocks.push_back(layer.grad_weight.data());
      blocks.emplace_back(layer.grad_bias);
    }
  });
  return blocks;
}

std::size_t parameter_count(const TwoHeadModel& model) {
  std::size_t count = 0;
  for_each_group(model, [&](std::string_view, const std::vector<DenseLayer>& layers) {
    for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
  });
  return count;
}

std::string serialize_parameters(const TwoHeadModel& model) {
  std::string out = "layer,row,col,value\n";
  for_each_group(model, [&](std::string_view group, const std::vector<DenseLayer>& layers) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const std::string prefix = std::string(group) + "." + std::to_string(li);
      const auto& layer = layers[li];
      for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
        for (std::size_t c = 0; c < layer.weight.cols(); ++c) {
          out += prefix + ".weight," + std::to_string(r) + "," + std::to_string(c) + "," +
                 format_double(layer.weight(r, c)) + "\n";
        }
      }
      for (std::size_t r = 0; r < layer.bias.size(); ++r) {
        out += prefix + ".bias," + std::to_string(r) + ",0," + format_double(layer.bias[r]) + "\n";
      }
    }
  });
  return out;
}

TwoHeadModel parse_parameters(std::string_view csv) {
  struct Entry {
    std::size_t row, col;
    double value;
  };
  // group -> layer index -> {"weight"/"bias" -> entries}
  std::map<std::string, std::map<std::size_t, std::map<std::string, std::vector<Entry>>>> groups;

  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != "layer,row,col,value") {
    throw DataError("parameter CSV must start with header 'layer,row,col,value'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) throw DataError("line " + std::to_string(line_no) + ": expected 4 fields");
    const std::string& name = fields[0];
    const auto dot1 = name.find('.');
    const auto dot2 = name.find('.', dot1 == std::string::npos ? dot1 : dot1 + 1);
    if (dot1 == std::string::npos || dot2 == std::string::npos) {
      throw DataError("line " + std::to_string(line_no) + ": bad layer name '" + name + "'");
    }
    const std::string group = name.substr(0, dot1);
    const std::string kind = name.substr(dot2 + 1);
    if ((group != "generator" && group != "head1" && group != "head2") ||
        (kind != "weight" && kind != "bias")) {
      throw DataError("line " + std::to_string(line_no) + ": bad layer name '" + name + "'");
    }
    try {
      const std::size_t index = std::stoul(name.substr(dot1 + 1, dot2 - dot1 - 1));
      groups[group][index][kind].push_back(
          {std::stoul(fields[1]), std::stoul(fields[2]), std::stod(fields[3])});
    } catch (const std::logic_error&) {
      throw DataError("line " + std::to_string(line_no) + ": malformed number");
    }
  }

  auto build = [&](const std::string& group, bool is_head) {
    std::vector<DenseLayer> layers;
    const auto it = groups.find(group);
    if (it == groups.end()) return layers;
    std::size_t expected = 0;
    for (const auto& [index, parts] : it->second) {
      if (index != expected++) throw DataError(group + ": layer indices are not contiguous");
      const auto w = parts.find("weight");
      const auto b = parts.find("bias");
      if (w == parts.end() || b == parts.end()) throw DataError(group + ": missing weight or bias");
      std::size_t rows = 0, cols = 0;
      for (const auto& e : w->second) {
        rows = std::max(rows, e.row + 1);
        cols = std::max(cols, e.col + 1);
      }
      if (w->second.size() != rows * cols || b->second.size() != rows) {
        throw DataError(group + "." + std::to_string(index) + ": incomplete parameter block");
      }
      DenseLayer layer(cols, rows, Activation::ReLU);
      for (const auto& e : w->second) layer.weight(e.row, e.col) = e.value;
      for (const auto& e : b->second) {
        if (e.row >= rows) throw DataError("bias row out of range");
        layer.bias[e.row] = e.value;
      }
      layers.push_back(std::move(layer));
    }
    if (is_head && !layers.empty()) layers.back().activation = Activation::Identity;
    return layers;
  };

  TwoHeadModel model;
  model.generator = build("generator", false);
  model.head1 = build("head1", true);
  model.head2 = build("head2", true);
  if (model.head1.size() != kHeadDepth || model.head2.size() != kHeadDepth) {
    throw DataError("each head must have exactly 3 layers");
  }
  for (std::size_t i = 0; i < kHeadDepth; ++i) {
    if (model.head1[i].weight.rows() != model.head2[i].weight.rows() ||
        model.head1[i].weight.cols() != model.head2[i].weight.cols()) {
      throw DataError("heads have different shapes");
    }
  }
  for (std::size_t i = 1; i < model.generator.size(); ++i) {
    if (model.generator[i].in_width() != model.generator[i - 1].out_width()) {
      throw DataError("generator layer widths do not chain");
    }
  }
  const std::size_t feature_width =
      model.generator.empty() ? model.head1.front().in_width() : model.generator.back().out_width();
  if (model.head1.front().in_width() != feature_width) {
    throw DataError("head input width does not match generator output");
  }
  model.input_width =
      model.generator.empty() ? feature_width : model.generator.front().in_width();
  model.num_classes = model.head1.back().out_width();
  return model;
}

}  // namespace divopt
