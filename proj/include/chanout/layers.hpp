#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/rng.hpp"
#include "chanout/selection.hpp"
#include "chanout/tensor.hpp"

namespace chanout {

enum class Mode { Train, Infer };

// ---------------------------------------------------------------------------
// Group bookkeeping shared by channel-out and maxout.
//
// Axis 0 is the feature axis; everything after it is spatial. Group g covers
// channels [gc*k, gc*k + k) at spatial position p, where g = gc * S + p and S
// is the spatial size. For 1-D input S == 1 and groups are consecutive.

struct GroupLayout {
  std::size_t channels = 0;
  std::size_t spatial = 1;
  std::size_t k = 1;

  std::size_t groups() const { return channels / k * spatial; }
  std::size_t element(std::size_t g, std::size_t member) const {
    const std::size_t gc = g / spatial, p = g % spatial;
    return (gc * k + member) * spatial + p;
  }
};

inline GroupLayout group_layout(const Shape& shape, std::size_t k, const char* who) {
  if (shape.empty()) throw ShapeError(std::string(who) + ": scalar input has no feature axis");
  if (k == 0) throw ConfigError(std::string(who) + ": group size must be positive");
  if (shape[0] % k != 0) {
    throw ConfigError(std::string(who) + ": feature dimension " + std::to_string(shape[0]) +
                      " not divisible by group size " + std::to_string(k));
  }
  return {shape[0], shape_size(shape) / shape[0], k};
}

/// Selected indices of every group touched by one channel-out or maxout call.
struct GroupSelection {
  Shape input_shape;
  std::size_t k = 1;
  std::size_t per_group = 1;  // l
  std::vector<int> indices;   // groups * per_group, ascending within a group

  std::size_t groups() const { return per_group ? indices.size() / per_group : 0; }
  std::span<const int> group(std::size_t g) const {
    return std::span<const int>(indices).subspan(g * per_group, per_group);
  }

  friend bool operator==(const GroupSelection&, const GroupSelection&) = default;
};

struct ChannelOutResult {
  Tensor output;
  GroupSelection trace;
};

/// Per group: selected channels pass unchanged, the rest are set to exactly 0. A group of
/// one candidate is passed through unchanged.
inline ChannelOutResult channel_out_forward(const Tensor& input, std::size_t k,
                                            const ChannelSelector& selector) {
  const auto layout = group_layout(input.shape(), k, "channel-out");
  const std::size_t l = selector.count();
  if (k > 1) {
    validate_selector(selector, k);
  } else if (l != 1) {
    throw ConfigError("channel-out: topl needs a group larger than l");
  }
  ChannelOutResult r{Tensor(input.shape()), {input.shape(), k, l, {}}};
  const std::size_t groups = layout.groups();
  r.trace.indices.resize(groups * l);
  std::vector<double> cand(k);
  for (std::size_t g = 0; g < groups; ++g) {
    std::span<int> out(r.trace.indices.data() + g * l, l);
    if (k == 1) {
      out[0] = 0;
    } else {
      for (std::size_t j = 0; j < k; ++j) cand[j] = input[layout.element(g, j)];
      select_into(selector, cand, out);
    }
    for (int j : out) {
      const std::size_t e = layout.element(g, static_cast<std::size_t>(j));
      r.output[e] = input[e];
    }
  }
  return r;
}

// Gradient passes only through the channels that were open in the forward pass.
inline Tensor channel_out_backward(const GroupSelection& trace, const Tensor& grad_out) {
  if (grad_out.shape() != trace.input_shape) {
    throw InternalError("channel-out backward: grad shape " + shape_string(grad_out.shape()) +
                        " does not match trace " + shape_string(trace.input_shape));
  }
  const auto layout = group_layout(trace.input_shape, trace.k, "channel-out");
  Tensor grad_in(grad_out.shape());
  for (std::size_t g = 0; g < layout.groups(); ++g) {
    for (int j : trace.group(g)) {
      const std::size_t e = layout.element(g, static_cast<std::size_t>(j));
      grad_in[e] = grad_out[e];
    }
  }
  return grad_in;
}

inline Shape maxout_output_shape(const Shape& in, std::size_t k) {
  group_layout(in, k, "maxout");
  Shape out = in;
  out[0] /= k;
  return out;
}

/// Max over each group of k consecutive feature maps; the feature axis
/// shrinks by k. Winners are recorded (lowest index on ties).
inline ChannelOutResult maxout_forward(const Tensor& input, std::size_t k) {
  const auto layout = group_layout(input.shape(), k, "maxout");
  ChannelOutResult r{Tensor(maxout_output_shape(input.shape(), k)), {input.shape(), k, 1, {}}};
  const std::size_t groups = layout.groups();
  r.trace.indices.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (input[layout.element(g, j)] > input[layout.element(g, best)]) best = j;
    }
    r.trace.indices[g] = static_cast<int>(best);
    // Output group g sits at (gc, p), i.e. flat index gc * S + p == g.
    r.output[g] = input[layout.element(g, best)];
  }
  return r;
}

inline Tensor maxout_backward(const GroupSelection& trace, const Tensor& grad_out) {
  const auto layout = group_layout(trace.input_shape, trace.k, "maxout");
  if (grad_out.size() != layout.groups()) {
    throw InternalError("maxout backward: grad length does not match trace");
  }
  Tensor grad_in(trace.input_shape);
  for (std::size_t g = 0; g < layout.groups(); ++g) {
    grad_in[layout.element(g, static_cast<std::size_t>(trace.indices[g]))] = grad_out[g];
  }
  return grad_in;
}

struct DropoutMask {
  std::vector<std::uint8_t> keep;  // empty means identity
  double scale = 1.0;

  friend bool operator==(const DropoutMask&, const DropoutMask&) = default;
};

struct DropoutResult {
  Tensor output;
  DropoutMask mask;
};

/// Inverted dropout. In train mode every unit consumes exactly one uniform
/// draw, in flat order, and survives when the draw is >= p. Infer mode and
/// p == 0 are the identity and draw nothing.
inline DropoutResult dropout_forward(const Tensor& input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Infer || p == 0.0) return {input, {}};
  DropoutResult r{Tensor(input.shape()), {std::vector<std::uint8_t>(input.size()), 1.0 / (1.0 - p)}};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool keep = rng.uniform() >= p;
    r.mask.keep[i] = keep;
    if (keep) r.output[i] = input[i] * r.mask.scale;
  }
  return r;
}

inline Tensor dropout_backward(const DropoutMask& mask, const Tensor& grad_out) {
  if (mask.keep.empty()) return grad_out;
  if (mask.keep.size() != grad_out.size()) throw InternalError("dropout backward: mask length mismatch");
  Tensor grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    if (mask.keep[i]) grad_in[i] = grad_out[i] * mask.scale;
  }
  return grad_in;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape());
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] /= z;
  return p;
}

struct XentResult {
  double loss;
  Tensor grad_logits;
};

inline XentResult softmax_xent(const Tensor& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - mx);
  const double log_z = mx + std::log(z);
  XentResult r{log_z - logits[static_cast<std::size_t>(label)], softmax(logits)};
  r.grad_logits[static_cast<std::size_t>(label)] -= 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Layers

struct DenseLayer {
  Tensor weight;  // out x in (input flattened)
  Tensor bias;    // out
};

struct Conv2DLayer {
  Tensor filters;  // F x C x kh x kw
  Tensor bias;     // F
  std::size_t stride = 1;
};

struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct ChannelOutLayer {
  std::size_t group = 2;
  ChannelSelector selector;
};

struct MaxoutLayer {
  std::size_t group = 2;
};

struct DropoutLayer {
  double p = 0.5;
};

// Softmax output with cross-entropy loss. Forward yields probabilities;
// backward expects the gradient with respect to the logits (see softmax_xent).
struct SoftmaxXentLayer {};

using Layer = std::variant<DenseLayer, Conv2DLayer, MaxPoolLayer, ChannelOutLayer, MaxoutLayer,
                           DropoutLayer, SoftmaxXentLayer>;

inline std::string layer_name(const Layer& layer) {
  static const char* names[] = {"dense", "conv", "pool", "channelout", "maxout", "dropout", "softmax"};
  return names[layer.index()];
}

inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, DenseLayer>) {
          if (l.weight.rank() != 2 || l.weight.dim(1) != shape_size(in)) {
            throw ConfigError("dense weight " + shape_string(l.weight.shape()) + " does not accept input " +
                              shape_string(in));
          }
          if (l.bias.shape() != Shape{l.weight.dim(0)}) throw ConfigError("dense bias shape mismatch");
          return {l.weight.dim(0)};
        } else if constexpr (std::is_same_v<L, Conv2DLayer>) {
          try {
            const auto g = conv_geometry(in, l.filters.shape(), l.stride);
            if (l.bias.shape() != Shape{g.filters}) throw ConfigError("conv bias shape mismatch");
            return {g.filters, g.out_h, g.out_w};
          } catch (const ShapeError& e) {
            throw ConfigError(e.what());
          }
        } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
          if (in.size() != 3) throw ConfigError("pool needs CxHxW input, got " + shape_string(in));
          if (l.window == 0 || l.stride == 0 || l.window > in[1] || l.window > in[2]) {
            throw ConfigError("pool window " + std::to_string(l.window) + " does not fit " + shape_string(in));
          }
          return {in[0], (in[1] - l.window) / l.stride + 1, (in[2] - l.window) / l.stride + 1};
        } else if constexpr (std::is_same_v<L, ChannelOutLayer>) {
          group_layout(in, l.group, "channel-out");
          if (l.group > 1) validate_selector(l.selector, l.group);
          return in;
        } else if constexpr (std::is_same_v<L, MaxoutLayer>) {
          return maxout_output_shape(in, l.group);
        } else if constexpr (std::is_same_v<L, DropoutLayer>) {
          if (!(l.p >= 0.0 && l.p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
          return in;
        } else {
          if (in.size() != 1) throw ConfigError("softmax needs a flat logit vector, got " + shape_string(in));
          return in;
        }
      },
      layer);
}

struct Network {
  Shape input_shape;
  std::vector<Layer> layers;
};

// Shape of every activation from the input (index 0) to the output.
inline std::vector<Shape> network_shapes(const Network& net) {
  std::vector<Shape> shapes{net.input_shape};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    try {
      shapes.push_back(layer_output_shape(net.layers[i], shapes.back()));
    } catch (const std::exception& e) {
      throw ConfigError("layer " + std::to_string(i) + " (" + layer_name(net.layers[i]) + "): " + e.what());
    }
  }
  return shapes;
}

inline std::vector<Tensor*> parameters(Network& net) {
  std::vector<Tensor*> out;
  for (auto& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    } else if (auto* c = std::get_if<Conv2DLayer>(&layer)) {
      out.push_back(&c->filters);
      out.push_back(&c->bias);
    }
  }
  return out;
}

inline std::vector<const Tensor*> parameters(const Network& net) {
  std::vector<const Tensor*> out;
  for (auto* t : parameters(const_cast<Network&>(net))) out.push_back(t);
  return out;
}

// Index of the layer owning each parameter tensor.
inline std::vector<std::size_t> parameter_owners(const Network& net) {
  std::vector<std::size_t> owners;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (std::holds_alternative<DenseLayer>(net.layers[i]) || std::holds_alternative<Conv2DLayer>(net.layers[i])) {
      owners.push_back(i);
      owners.push_back(i);
    }
  }
  return owners;
}

inline std::size_t layer_parameter_count(const Layer& layer) {
  if (auto* d = std::get_if<DenseLayer>(&layer)) return d->weight.size() + d->bias.size();
  if (auto* c = std::get_if<Conv2DLayer>(&layer)) return c->filters.size() + c->bias.size();
  return 0;
}

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& layer : net.layers) n += layer_parameter_count(layer);
  return n;
}

/// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases start at 0.
/// Draws happen layer by layer in flat order.
inline void init_parameters(Network& net, Rng& rng) {
  for (auto& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      const double s = std::sqrt(6.0 / static_cast<double>(d->weight.dim(0) + d->weight.dim(1)));
      for (auto& w : d->weight.data()) w = rng.uniform(-s, s);
      d->bias.fill(0.0);
    } else if (auto* c = std::get_if<Conv2DLayer>(&layer)) {
      const auto& fs = c->filters.shape();
      const double area = static_cast<double>(fs[2] * fs[3]);
      const double s = std::sqrt(6.0 / (static_cast<double>(fs[1]) * area + static_cast<double>(fs[0]) * area));
      for (auto& w : c->filters.data()) w = rng.uniform(-s, s);
      c->bias.fill(0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// Traces

/// Everything backward needs from one layer's forward pass.
struct LayerTrace {
  Tensor input;                      // dense / conv
  GroupSelection selection;          // channel-out / maxout
  DropoutMask dropout;               // dropout
  std::vector<std::size_t> argmax;   // pool
  std::vector<std::size_t> support;  // sparse path: nonzero input indices used
  bool sparse = false;
};

struct Trace {
  std::vector<LayerTrace> layers;
};

// Compares only the discrete routing decisions: group selections and pool winners.
inline bool same_routing(const Trace& a, const Trace& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].selection.indices != b.layers[i].selection.indices) return false;
    if (a.layers[i].argmax != b.layers[i].argmax) return false;
  }
  return true;
}

}  // namespace chanout
