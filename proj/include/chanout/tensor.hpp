#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chanout/errors.hpp"

namespace chanout {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array of doubles.
///
/// Every extent is positive and `size() == product(shape())`. Operations in
/// this header never mutate their arguments.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(Shape shape) const {
    if (checked_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Multiply-add tally for one forward or backward call.
struct OpCounter {
  std::uint64_t multiply_adds = 0;
  void add(std::uint64_t n) { multiply_adds += n; }
};

// C[i][j] = sum_t A[i][t] * B[t][j], accumulated in ascending t from +0.0.
inline Tensor matmul(const Tensor& a, const Tensor& b, OpCounter* counter = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
      c.at(i, j) = acc;
    }
  }
  if (counter) counter->add(m * k * n);
  return c;
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t filters, kernel_h, kernel_w, stride;
  std::size_t out_h, out_w;

  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }

  // Flat input offset of patch entry t for output position p.
  // Patch entries run over (channel, row, col), matching the conv summation order.
  std::size_t input_offset(std::size_t p, std::size_t t) const {
    const std::size_t oy = p / out_w, ox = p % out_w;
    const std::size_t c = t / (kernel_h * kernel_w);
    const std::size_t r = (t / kernel_w) % kernel_h;
    const std::size_t s = t % kernel_w;
    return (c * height + oy * stride + r) * width + ox * stride + s;
  }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& filters, std::size_t stride) {
  if (input.size() != 3 || filters.size() != 4) {
    throw ShapeError("conv2d: expected CxHxW input and FxCxKhxKw filters, got " +
                     shape_string(input) + " and " + shape_string(filters));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (filters[1] != input[0]) {
    throw ShapeError("conv2d: filter channels " + std::to_string(filters[1]) +
                     " != input channels " + std::to_string(input[0]));
  }
  if (filters[2] > input[1] || filters[3] > input[2]) {
    throw ShapeError("conv2d: filter " + shape_string(filters) + " larger than input " +
                     shape_string(input));
  }
  ConvGeometry g{input[0], input[1], input[2], filters[0], filters[2], filters[3], stride, 0, 0};
  g.out_h = (g.height - g.kernel_h) / stride + 1;
  g.out_w = (g.width - g.kernel_w) / stride + 1;
  return g;
}

/// Valid (unpadded) cross-correlation. Each output accumulates from +0.0 over
/// channel, then kernel row, then kernel column.
inline Tensor conv2d(const Tensor& input, const Tensor& filters, std::size_t stride,
                     OpCounter* counter = nullptr) {
  const auto g = conv_geometry(input.shape(), filters.shape(), stride);
  Tensor out({g.filters, g.out_h, g.out_w});
  const auto in = input.data();
  const auto w = filters.data();
  const std::size_t patch = g.patch_size();
  for (std::size_t f = 0; f < g.filters; ++f) {
    for (std::size_t p = 0; p < g.positions(); ++p) {
      double acc = 0.0;
      for (std::size_t t = 0; t < patch; ++t) acc += in[g.input_offset(p, t)] * w[f * patch + t];
      out[f * g.positions() + p] = acc;
    }
  }
  if (counter) counter->add(g.filters * g.positions() * patch);
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor filters;
};

/// Gradients of conv2d. Both accumulations walk output positions in ascending
/// order; the input gradient first reduces over filters per patch entry, then
/// scatters. The sparse kernels reproduce this order exactly.
inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& filters, std::size_t stride,
                                 const Tensor& grad_out, OpCounter* counter = nullptr) {
  const auto g = conv_geometry(input.shape(), filters.shape(), stride);
  if (grad_out.shape() != Shape{g.filters, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: grad shape " + shape_string(grad_out.shape()));
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(filters.shape())};
  const auto in = input.data();
  const auto w = filters.data();
  const auto go = grad_out.data();
  auto gi = grads.input.data();
  auto gw = grads.filters.data();
  const std::size_t patch = g.patch_size(), npos = g.positions();
  for (std::size_t p = 0; p < npos; ++p) {
    for (std::size_t t = 0; t < patch; ++t) {
      const std::size_t off = g.input_offset(p, t);
      double acc = 0.0;
      for (std::size_t f = 0; f < g.filters; ++f) {
        const double gf = go[f * npos + p];
        acc += w[f * patch + t] * gf;
        gw[f * patch + t] += gf * in[off];
      }
      gi[off] += acc;
    }
  }
  if (counter) counter->add(2 * g.filters * npos * patch);
  return grads;
}

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index of each output's winner
};

inline PoolResult maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 3) throw ShapeError("maxpool2d: expected CxHxW, got " + shape_string(input.shape()));
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                     shape_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  PoolResult r{Tensor({c, oh, ow}), std::vector<std::size_t>(c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = (ch * h + oy * stride) * w + ox * stride;
        for (std::size_t r0 = 0; r0 < window; ++r0) {
          for (std::size_t s0 = 0; s0 < window; ++s0) {
            const std::size_t idx = (ch * h + oy * stride + r0) * w + ox * stride + s0;
            // Strict comparison keeps the lowest flat index on ties.
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

inline Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                                 const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw InternalError("maxpool2d_backward: argmax/grad length mismatch");
  }
  Tensor grad_in(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

}  // namespace chanout
