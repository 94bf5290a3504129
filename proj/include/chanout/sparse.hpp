#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/layers.hpp"
#include "chanout/rng.hpp"
#include "chanout/selection.hpp"
#include "chanout/tensor.hpp"

namespace chanout {

/// Channel-out output kept as its open entries only.
///
/// `indices` are ascending flat positions into `dense_shape`. They come from
/// the selection trace, not from testing values against zero, so an open
/// channel whose activation happens to be 0 is still listed.
struct SparseActivation {
  Shape dense_shape;
  std::vector<std::size_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  std::size_t dense_size() const { return shape_size(dense_shape); }
};

// Open positions of a channel-out trace, ascending.
inline std::vector<std::size_t> selection_support(const GroupSelection& sel) {
  const auto layout = group_layout(sel.input_shape, sel.k, "sparsify");
  std::vector<std::size_t> support;
  support.reserve(sel.indices.size());
  for (std::size_t g = 0; g < layout.groups(); ++g) {
    for (int j : sel.group(g)) support.push_back(layout.element(g, static_cast<std::size_t>(j)));
  }
  std::sort(support.begin(), support.end());
  return support;
}

inline SparseActivation sparsify(const Tensor& dense, std::vector<std::size_t> support) {
  SparseActivation x{dense.shape(), std::move(support), {}};
  x.values.reserve(x.indices.size());
  for (auto i : x.indices) {
    if (i >= dense.size()) throw InternalError("sparsify: index outside tensor");
    x.values.push_back(dense[i]);
  }
  return x;
}

inline SparseActivation sparsify(const Tensor& dense, const GroupSelection& sel) {
  if (dense.shape() != sel.input_shape) throw InternalError("sparsify: tensor does not match selection trace");
  return sparsify(dense, selection_support(sel));
}

inline Tensor densify(const SparseActivation& x) {
  Tensor out(x.dense_shape);
  for (std::size_t n = 0; n < x.nnz(); ++n) out[x.indices[n]] = x.values[n];
  return out;
}

/// y = W * densify(x) + b touching only the open columns, in ascending column
/// order. Bit-identical to matmul followed by the bias add.
inline Tensor sparse_dense_forward(const Tensor& weight, const Tensor& bias, const SparseActivation& x,
                                   OpCounter& counter) {
  if (weight.rank() != 2 || weight.dim(1) != x.dense_size() || bias.size() != weight.dim(0)) {
    throw ShapeError("sparse_dense_forward: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.dense_shape));
  }
  const std::size_t m = weight.dim(0), d = weight.dim(1);
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t n = 0; n < x.nnz(); ++n) {
      if (x.indices[n] >= d) throw InternalError("sparse_dense_forward: index out of range");
      acc += weight.at(i, x.indices[n]) * x.values[n];
    }
    y[i] = acc + bias[i];
  }
  counter.add(m * x.nnz());
  return y;
}

struct SparseDenseGrads {
  Tensor weight;  // m x d, columns of closed channels stay exactly 0
  Tensor input;   // dense-shaped, nonzero only on open indices
};

/// Backward of sparse_dense_forward. Rows with zero incoming gradient are
/// skipped, so a zero grad_y costs nothing beyond the traversal.
inline SparseDenseGrads sparse_dense_backward(const Tensor& weight, const SparseActivation& x, const Tensor& grad_y,
                                              OpCounter& counter) {
  if (weight.rank() != 2 || weight.dim(1) != x.dense_size() || grad_y.size() != weight.dim(0)) {
    throw ShapeError("sparse_dense_backward: shape mismatch");
  }
  const std::size_t m = weight.dim(0);
  SparseDenseGrads g{Tensor(weight.shape()), Tensor(x.dense_shape)};
  std::size_t live_rows = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double gi = grad_y[i];
    if (gi == 0.0) continue;
    ++live_rows;
    for (std::size_t n = 0; n < x.nnz(); ++n) g.weight.at(i, x.indices[n]) = gi * x.values[n];
  }
  for (std::size_t n = 0; n < x.nnz(); ++n) {
    const std::size_t t = x.indices[n];
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (grad_y[i] != 0.0) acc += weight.at(i, t) * grad_y[i];
    }
    g.input[t] = acc;
  }
  counter.add(2 * live_rows * x.nnz());
  return g;
}

namespace detail {

inline std::vector<std::uint8_t> support_mask(const SparseActivation& x) {
  std::vector<std::uint8_t> open(x.dense_size(), 0);
  for (auto i : x.indices) open[i] = 1;
  return open;
}

}  // namespace detail

/// Convolution over a sparse input, lowered to one sparse matrix-vector
/// product per output position (im2col without materialising the columns).
inline Tensor sparse_conv2d_forward(const Tensor& filters, const Tensor& bias, std::size_t stride,
                                    const SparseActivation& x, OpCounter& counter) {
  const auto g = conv_geometry(x.dense_shape, filters.shape(), stride);
  const Tensor dense = densify(x);
  const auto open = detail::support_mask(x);
  const std::size_t patch = g.patch_size(), npos = g.positions();
  Tensor out({g.filters, g.out_h, g.out_w});
  std::vector<std::size_t> cols;
  cols.reserve(patch);
  for (std::size_t p = 0; p < npos; ++p) {
    cols.clear();
    for (std::size_t t = 0; t < patch; ++t)
      if (open[g.input_offset(p, t)]) cols.push_back(t);
    for (std::size_t f = 0; f < g.filters; ++f) {
      double acc = 0.0;
      for (auto t : cols) acc += dense[g.input_offset(p, t)] * filters[f * patch + t];
      out[f * npos + p] = acc + bias[f];
    }
    counter.add(g.filters * cols.size());
  }
  return out;
}

inline ConvGrads sparse_conv2d_backward(const Tensor& filters, std::size_t stride, const SparseActivation& x,
                                        const Tensor& grad_out, OpCounter& counter) {
  const auto g = conv_geometry(x.dense_shape, filters.shape(), stride);
  const Tensor dense = densify(x);
  const auto open = detail::support_mask(x);
  const std::size_t patch = g.patch_size(), npos = g.positions();
  ConvGrads grads{Tensor(x.dense_shape), Tensor(filters.shape())};
  std::vector<std::size_t> live;
  for (std::size_t p = 0; p < npos; ++p) {
    live.clear();
    for (std::size_t f = 0; f < g.filters; ++f)
      if (grad_out[f * npos + p] != 0.0) live.push_back(f);
    if (live.empty()) continue;
    for (std::size_t t = 0; t < patch; ++t) {
      const std::size_t off = g.input_offset(p, t);
      if (!open[off]) continue;
      double acc = 0.0;
      for (auto f : live) {
        const double gf = grad_out[f * npos + p];
        acc += filters[f * patch + t] * gf;
        grads.filters[f * patch + t] += gf * dense[off];
      }
      grads.input[off] += acc;
      counter.add(2 * live.size());
    }
  }
  return grads;
}

struct BenchReport {
  std::size_t m = 0, d = 0, k = 0, l = 0;
  std::uint64_t madds_dense = 0, madds_sparse = 0;
  double ratio = 0.0;
  double time_dense_ns = 0.0, time_sparse_ns = 0.0;  // mean per trial
};

/// Dense vs sparse forward of an m x d layer fed by a channel-out layer with
/// groups of k. The operation counts are exact; timings are as measured.
inline BenchReport bench_sparse_vs_dense(std::size_t m, std::size_t d, std::size_t k, const ChannelSelector& selector,
                                         std::size_t trials, Rng& rng) {
  if (trials < 1) throw ConfigError("bench needs at least one trial");
  if (m == 0 || d == 0) throw ConfigError("bench dimensions must be positive");
  Tensor weight({m, d}), bias({m});
  for (auto& w : weight.data()) w = rng.uniform(-1.0, 1.0);
  for (auto& b : bias.data()) b = rng.uniform(-1.0, 1.0);

  BenchReport r{m, d, k, selector.count()};
  using clock = std::chrono::steady_clock;
  clock::duration dense_time{}, sparse_time{};
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Tensor pre({d});
    for (auto& v : pre.data()) v = rng.normal();
    auto co = channel_out_forward(pre, k, selector);

    OpCounter dense_ops, sparse_ops;
    auto t0 = clock::now();
    Tensor y_dense = matmul(weight, co.output.reshaped({d, 1}), &dense_ops).reshaped({m});
    for (std::size_t i = 0; i < m; ++i) y_dense[i] += bias[i];
    auto t1 = clock::now();
    auto x = sparsify(co.output, co.trace);
    Tensor y_sparse = sparse_dense_forward(weight, bias, x, sparse_ops);
    auto t2 = clock::now();

    if (!(y_dense == y_sparse)) throw InternalError("bench: sparse forward diverged from dense");
    dense_time += t1 - t0;
    sparse_time += t2 - t1;
    r.madds_dense += dense_ops.multiply_adds;
    r.madds_sparse += sparse_ops.multiply_adds;
  }
  r.madds_dense /= trials;
  r.madds_sparse /= trials;
  r.ratio = static_cast<double>(r.madds_sparse) / static_cast<double>(r.madds_dense);
  r.time_dense_ns = std::chrono::duration<double, std::nano>(dense_time).count() / static_cast<double>(trials);
  r.time_sparse_ns = std::chrono::duration<double, std::nano>(sparse_time).count() / static_cast<double>(trials);
  return r;
}

}  // namespace chanout
