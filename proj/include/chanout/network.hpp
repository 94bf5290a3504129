#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/layers.hpp"
#include "chanout/rng.hpp"
#include "chanout/sparse.hpp"
#include "chanout/tensor.hpp"

namespace chanout {

struct ExecOptions {
  // Run dense/conv layers fed (through dropout only) by a channel-out layer on
  // the open entries alone.
  bool sparse = false;
  OpCounter* counter = nullptr;
};

struct ForwardResult {
  Tensor output;
  Trace trace;
};

namespace detail {

// Open input positions for layer i when it sits behind a channel-out layer.
inline std::optional<std::vector<std::size_t>> sparse_support(const Network& net, const Trace& trace,
                                                              std::size_t i) {
  std::vector<std::size_t> dropouts;
  std::size_t j = i;
  while (j > 0) {
    --j;
    if (std::holds_alternative<DropoutLayer>(net.layers[j])) {
      dropouts.push_back(j);
      continue;
    }
    if (!std::holds_alternative<ChannelOutLayer>(net.layers[j])) return std::nullopt;
    auto support = selection_support(trace.layers[j].selection);
    for (auto d : dropouts) {
      const auto& keep = trace.layers[d].dropout.keep;
      if (keep.empty()) continue;
      std::erase_if(support, [&](std::size_t e) { return !keep[e]; });
    }
    return support;
  }
  return std::nullopt;
}

}  // namespace detail

/// Runs the layer stack on one sample. Dropout draws from `rng` in train mode.
inline ForwardResult network_forward(const Network& net, const Tensor& input, Mode mode, Rng& rng,
                                     const ExecOptions& opts = {}) {
  if (input.shape() != net.input_shape) {
    throw ShapeError("network input " + shape_string(input.shape()) + " != expected " +
                     shape_string(net.input_shape));
  }
  ForwardResult r{input, {}};
  r.trace.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerTrace& lt = r.trace.layers[i];
    Tensor& x = r.output;
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            const std::size_t m = layer.weight.dim(0), d = layer.weight.dim(1);
            std::optional<std::vector<std::size_t>> support;
            if (opts.sparse) support = detail::sparse_support(net, r.trace, i);
            if (support) {
              OpCounter ops;
              auto sx = sparsify(x.reshaped({d}), *support);
              Tensor y = sparse_dense_forward(layer.weight, layer.bias, sx, ops);
              if (opts.counter) opts.counter->add(ops.multiply_adds);
              lt.support = std::move(*support);
              lt.sparse = true;
              lt.input = std::move(x);
              x = std::move(y);
            } else {
              Tensor y = matmul(layer.weight, x.reshaped({d, 1}), opts.counter).reshaped({m});
              for (std::size_t o = 0; o < m; ++o) y[o] += layer.bias[o];
              lt.input = std::move(x);
              x = std::move(y);
            }
          } else if constexpr (std::is_same_v<L, Conv2DLayer>) {
            std::optional<std::vector<std::size_t>> support;
            if (opts.sparse) support = detail::sparse_support(net, r.trace, i);
            Tensor y;
            if (support) {
              OpCounter ops;
              y = sparse_conv2d_forward(layer.filters, layer.bias, layer.stride, sparsify(x, *support), ops);
              if (opts.counter) opts.counter->add(ops.multiply_adds);
              lt.support = std::move(*support);
              lt.sparse = true;
            } else {
              y = conv2d(x, layer.filters, layer.stride, opts.counter);
              const std::size_t npos = y.size() / y.dim(0);
              for (std::size_t f = 0; f < y.dim(0); ++f)
                for (std::size_t p = 0; p < npos; ++p) y[f * npos + p] += layer.bias[f];
            }
            lt.input = std::move(x);
            x = std::move(y);
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            auto pr = maxpool2d(x, layer.window, layer.stride);
            lt.input = Tensor(x.shape());  // only the shape is needed for backward
            lt.argmax = std::move(pr.argmax);
            x = std::move(pr.output);
          } else if constexpr (std::is_same_v<L, ChannelOutLayer>) {
            auto co = channel_out_forward(x, layer.group, layer.selector);
            lt.selection = std::move(co.trace);
            x = std::move(co.output);
          } else if constexpr (std::is_same_v<L, MaxoutLayer>) {
            auto mo = maxout_forward(x, layer.group);
            lt.selection = std::move(mo.trace);
            x = std::move(mo.output);
          } else if constexpr (std::is_same_v<L, DropoutLayer>) {
            auto dr = dropout_forward(x, layer.p, mode, rng);
            lt.dropout = std::move(dr.mask);
            x = std::move(dr.output);
          } else {
            lt.input = x;
            x = softmax(x);
          }
        },
        net.layers[i]);
  }
  return r;
}

struct Gradients {
  std::vector<Tensor> params;  // aligned with parameters(net)
  Tensor input;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto* p : parameters(net)) g.params.emplace_back(p->shape());
    return g;
  }

  void accumulate(const Gradients& other) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto dst = params[t].data();
      auto src = other.params[t].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
};

/// Backpropagates `grad_output` through the recorded trace. When the last
/// layer is SoftmaxXent, `grad_output` is the gradient with respect to the
/// logits (the fused softmax/cross-entropy gradient).
inline Gradients network_backward(const Network& net, const Trace& trace, const Tensor& grad_output,
                                  const ExecOptions& opts = {}) {
  if (trace.layers.size() != net.layers.size()) throw InternalError("trace does not belong to this network");
  Gradients grads;
  Tensor g = grad_output;
  std::vector<std::vector<Tensor>> owned(net.layers.size());
  for (std::size_t ii = net.layers.size(); ii > 0; --ii) {
    const std::size_t i = ii - 1;
    const LayerTrace& lt = trace.layers[i];
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            const std::size_t m = layer.weight.dim(0), d = layer.weight.dim(1);
            if (g.size() != m) throw InternalError("dense backward: gradient length mismatch");
            Tensor gb = g.reshaped({m});
            if (lt.sparse) {
              OpCounter ops;
              auto sx = sparsify(lt.input.reshaped({d}), lt.support);
              auto sg = sparse_dense_backward(layer.weight, sx, gb, ops);
              if (opts.counter) opts.counter->add(ops.multiply_adds);
              owned[i] = {std::move(sg.weight), gb};
              g = sg.input.reshaped(lt.input.shape());
            } else {
              Tensor gw({m, d});
              Tensor gx(lt.input.shape());
              for (std::size_t o = 0; o < m; ++o)
                for (std::size_t t = 0; t < d; ++t) gw.at(o, t) = gb[o] * lt.input[t];
              for (std::size_t t = 0; t < d; ++t) {
                double acc = 0.0;
                for (std::size_t o = 0; o < m; ++o) acc += layer.weight.at(o, t) * gb[o];
                gx[t] = acc;
              }
              if (opts.counter) opts.counter->add(2 * m * d);
              owned[i] = {std::move(gw), gb};
              g = std::move(gx);
            }
          } else if constexpr (std::is_same_v<L, Conv2DLayer>) {
            Tensor gbias(layer.bias.shape());
            const std::size_t npos = g.size() / g.dim(0);
            for (std::size_t f = 0; f < g.dim(0); ++f)
              for (std::size_t p = 0; p < npos; ++p) gbias[f] += g[f * npos + p];
            ConvGrads cg;
            if (lt.sparse) {
              OpCounter ops;
              cg = sparse_conv2d_backward(layer.filters, layer.stride, sparsify(lt.input, lt.support), g, ops);
              if (opts.counter) opts.counter->add(ops.multiply_adds);
            } else {
              cg = conv2d_backward(lt.input, layer.filters, layer.stride, g, opts.counter);
            }
            owned[i] = {std::move(cg.filters), std::move(gbias)};
            g = std::move(cg.input);
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            g = maxpool2d_backward(lt.input.shape(), lt.argmax, g);
          } else if constexpr (std::is_same_v<L, ChannelOutLayer>) {
            g = channel_out_backward(lt.selection, g);
          } else if constexpr (std::is_same_v<L, MaxoutLayer>) {
            g = maxout_backward(lt.selection, g);
          } else if constexpr (std::is_same_v<L, DropoutLayer>) {
            g = dropout_backward(lt.dropout, g);
          } else {
            // Fused with the loss: g already is d(loss)/d(logits).
          }
        },
        net.layers[i]);
  }
  for (auto& tensors : owned)
    for (auto& t : tensors) grads.params.push_back(std::move(t));
  grads.input = std::move(g);
  return grads;
}

struct LossResult {
  double loss = 0.0;
  int predicted = 0;
  ForwardResult forward;
  Tensor grad_logits;
};

/// Forward pass plus softmax cross-entropy; the network must end in SoftmaxXent.
inline LossResult network_loss(const Network& net, const Tensor& input, int label, Mode mode, Rng& rng,
                               const ExecOptions& opts = {}) {
  if (net.layers.empty() || !std::holds_alternative<SoftmaxXentLayer>(net.layers.back())) {
    throw ConfigError("network must end in a softmax layer to compute a loss");
  }
  LossResult r;
  r.forward = network_forward(net, input, mode, rng, opts);
  const Tensor& logits = r.forward.trace.layers.back().input;
  auto xent = softmax_xent(logits, label);
  r.loss = xent.loss;
  r.grad_logits = std::move(xent.grad_logits);
  const Tensor& probs = r.forward.output;
  r.predicted = static_cast<int>(std::max_element(probs.data().begin(), probs.data().end()) - probs.data().begin());
  return r;
}

}  // namespace chanout
