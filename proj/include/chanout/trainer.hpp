#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "chanout/dataset.hpp"
#include "chanout/errors.hpp"
#include "chanout/layers.hpp"
#include "chanout/network.hpp"
#include "chanout/rng.hpp"
#include "chanout/selection.hpp"

namespace chanout {

// ---------------------------------------------------------------------------
// Configuration

enum class LayerType { Dense, Conv, Pool, ChannelOut, Maxout, Dropout };

inline const char* layer_type_name(LayerType t) {
  switch (t) {
    case LayerType::Dense: return "dense";
    case LayerType::Conv: return "conv";
    case LayerType::Pool: return "pool";
    case LayerType::ChannelOut: return "channelout";
    case LayerType::Maxout: return "maxout";
    case LayerType::Dropout: return "dropout";
  }
  return "?";
}

struct LayerSpec {
  LayerType type = LayerType::Dense;
  std::size_t units = 0;   // dense outputs or conv filters
  std::size_t kernel = 0;  // conv
  std::size_t stride = 1;  // conv / pool
  std::size_t window = 0;  // pool
  std::size_t group = 0;   // channel-out / maxout
  std::optional<ChannelSelector> selector;  // channel-out; falls back to NetworkConfig::selector
  double p = 0.0;          // dropout

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Declarative network: hidden layers in order. The builder appends the
/// softmax output layer (dense to `classes` plus softmax) itself.
struct NetworkConfig {
  Shape input_shape;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;
  ChannelSelector selector = ChannelSelector::argmax();
  double dropout_input = 0.0;   // before the first layer
  double dropout_hidden = 0.0;  // after every channel-out/maxout block that feeds another hidden linear layer

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct AugmentConfig {
  bool flip = false;
  double flip_probability = 0.5;
  bool zca = false;
  double zca_epsilon = 1e-2;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct LayerReport {
  std::size_t index = 0;  // position in the built layer stack
  std::string kind;
  Shape output_shape;
  std::size_t parameters = 0;
};

struct BuiltNetwork {
  Network net;
  std::vector<LayerReport> report;
  std::size_t parameter_count = 0;
  std::vector<std::size_t> feature_maps;  // width of every hidden dense/conv layer, in order
};

/// Expands the config into a shape-checked layer stack with zeroed
/// parameters; call init_parameters afterwards.
inline BuiltNetwork build_network(const NetworkConfig& cfg) {
  if (cfg.input_shape.empty()) throw ConfigError("network input shape is not set");
  if (cfg.classes < 2) throw ConfigError("network needs at least 2 classes");
  if (!(cfg.dropout_input >= 0.0 && cfg.dropout_input < 1.0) ||
      !(cfg.dropout_hidden >= 0.0 && cfg.dropout_hidden < 1.0)) {
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  }
  BuiltNetwork b;
  b.net.input_shape = cfg.input_shape;
  Shape shape = cfg.input_shape;

  auto push = [&](Layer layer, const std::string& where) {
    try {
      Shape out = layer_output_shape(layer, shape);
      b.net.layers.push_back(std::move(layer));
      shape = std::move(out);
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  };

  if (cfg.dropout_input > 0.0) push(DropoutLayer{cfg.dropout_input}, "input dropout");

  auto is_linear = [](LayerType t) { return t == LayerType::Dense || t == LayerType::Conv; };
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& s = cfg.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_type_name(s.type) + ")";
    switch (s.type) {
      case LayerType::Dense: {
        if (s.units == 0) throw ConfigError(where + ": units must be positive");
        const std::size_t d = shape_size(shape);
        push(DenseLayer{Tensor({s.units, d}), Tensor({s.units})}, where);
        b.feature_maps.push_back(s.units);
        break;
      }
      case LayerType::Conv: {
        if (s.units == 0 || s.kernel == 0) throw ConfigError(where + ": filters and kernel must be positive");
        if (shape.size() != 3) throw ConfigError(where + ": needs CxHxW input, got " + shape_string(shape));
        push(Conv2DLayer{Tensor({s.units, shape[0], s.kernel, s.kernel}), Tensor({s.units}), s.stride}, where);
        b.feature_maps.push_back(s.units);
        break;
      }
      case LayerType::Pool:
        push(MaxPoolLayer{s.window, s.stride}, where);
        break;
      case LayerType::ChannelOut:
        push(ChannelOutLayer{s.group, s.selector.value_or(cfg.selector)}, where);
        break;
      case LayerType::Maxout:
        push(MaxoutLayer{s.group}, where);
        break;
      case LayerType::Dropout:
        push(DropoutLayer{s.p}, where);
        break;
    }
    const bool block_end = s.type == LayerType::ChannelOut || s.type == LayerType::Maxout;
    if (block_end && cfg.dropout_hidden > 0.0) {
      bool more_linear = false;
      for (std::size_t j = i + 1; j < cfg.layers.size(); ++j) more_linear |= is_linear(cfg.layers[j].type);
      if (more_linear) push(DropoutLayer{cfg.dropout_hidden}, where + " dropout");
    }
  }
  const std::size_t d = shape_size(shape);
  push(DenseLayer{Tensor({cfg.classes, d}), Tensor({cfg.classes})}, "output layer");
  push(SoftmaxXentLayer{}, "softmax");

  const auto shapes = network_shapes(b.net);
  for (std::size_t i = 0; i < b.net.layers.size(); ++i) {
    const std::size_t n = layer_parameter_count(b.net.layers[i]);
    b.report.push_back({i, layer_name(b.net.layers[i]), shapes[i + 1], n});
    b.parameter_count += n;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdState {
  std::vector<Tensor> velocity;
};

// v <- mu * v - lr * g;  w <- w + v
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdState& state,
                     double learning_rate, double momentum) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (grads.size() != params.size()) throw InternalError("sgd_step: gradient count mismatch");
  if (state.velocity.empty()) {
    for (const auto* p : params) state.velocity.emplace_back(p->shape());
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto w = params[t]->data();
    auto v = state.velocity[t].data();
    auto g = grads[t].data();
    if (g.size() != w.size()) throw InternalError("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] - learning_rate * g[i];
      w[i] += v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Reverses column order in every channel with probability p. Always
/// consumes exactly one uniform draw.
inline Tensor augment_flip(const Tensor& image, Rng& rng, double p = 0.5) {
  if (image.rank() != 3) throw ConfigError("flip augmentation needs a CxHxW image, got " + shape_string(image.shape()));
  const bool flip = rng.uniform() < p;
  if (!flip) return image;
  Tensor out(image.shape());
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

/// x -> M (x - mean), M = E (D + eps I)^(-1/2) E^T from the eigendecomposition
/// of the (1/n) feature covariance.
struct ZcaTransform {
  std::vector<double> mean;
  Tensor matrix;  // d x d, symmetric

  Tensor apply(const Tensor& x) const {
    const std::size_t d = mean.size();
    if (x.size() != d) throw ShapeError("zca: feature length mismatch");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += matrix.at(i, j) * (x[j] - mean[j]);
      out[i] = acc;
    }
    return out;
  }

  Dataset apply(const Dataset& data) const {
    Dataset out = data;
    for (auto& s : out.samples) s.features = apply(s.features);
    return out;
  }
};

inline ZcaTransform fit_zca(const Dataset& data, double epsilon = 1e-2) {
  if (data.size() < 2) throw DataError("zca whitening needs at least 2 samples");
  if (!(epsilon > 0.0)) throw ConfigError("zca epsilon must be positive");
  const std::size_t n = data.size(), d = shape_size(data.feature_shape);
  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data.samples[r].features[c];
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd inv_sqrt = (vals.array() + epsilon).rsqrt();
  const Eigen::MatrixXd m = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();

  ZcaTransform t{std::vector<double>(d), Tensor({d, d})};
  for (std::size_t i = 0; i < d; ++i) {
    t.mean[i] = mu(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < d; ++j) t.matrix.at(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return t;
}

inline std::pair<Dataset, ZcaTransform> zca_whiten(const Dataset& data, double epsilon = 1e-2) {
  auto t = fit_zca(data, epsilon);
  return {t.apply(data), std::move(t)};
}

// ---------------------------------------------------------------------------
// Training

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

// Inference-mode accuracy; NaN for an empty dataset.
inline double evaluate_accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  Rng unused(0);
  std::size_t correct = 0;
  for (const auto& s : data.samples) {
    const auto r = network_forward(net, s.features, Mode::Infer, unused);
    const auto out = r.output.data();
    const auto best = std::max_element(out.begin(), out.end()) - out.begin();
    correct += (best == s.label);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

using EpochHook = std::function<void(const EpochMetrics&, const Network&)>;

/// Minibatch SGD with momentum. Randomness comes from the "shuffle",
/// "dropout" and "augment" sub-streams of `root`. Per-sample gradients are
/// summed in batch order and averaged before each step.
inline std::vector<EpochMetrics> train(Network& net, const Dataset& train_set, const Dataset& test_set,
                                       const OptimizerConfig& opt, const AugmentConfig& aug, const Rng& root,
                                       const EpochHook& on_epoch = {}) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
  Rng shuffle = root.substream("shuffle");
  Rng dropout = root.substream("dropout");
  Rng augment = root.substream("augment");
  SgdState state;
  auto params = parameters(net);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffle.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      Gradients batch = Gradients::zeros_like(net);
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = train_set.samples[order[b]];
        const Tensor x = aug.flip ? augment_flip(s.features, augment, aug.flip_probability) : s.features;
        auto lr = network_loss(net, x, s.label, Mode::Train, dropout);
        loss_sum += lr.loss;
        batch.accumulate(network_backward(net, lr.forward.trace, lr.grad_logits));
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& g : batch.params)
        for (auto& v : g.data()) v *= inv;
      sgd_step(params, batch.params, state, opt.learning_rate, opt.momentum);
    }
    EpochMetrics m{epoch, loss_sum / static_cast<double>(order.size()), evaluate_accuracy(net, train_set),
                   evaluate_accuracy(net, test_set)};
    history.push_back(m);
    if (on_epoch) on_epoch(m, net);
  }
  return history;
}

}  // namespace chanout
