#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/layers.hpp"
#include "chanout/tensor.hpp"

namespace chanout {

using TargetFn = std::function<double(std::span<const double>)>;

// Universal approximation by one max-selected channel-out group.
//
// The domain is cut into cubic lattices of pitch delta. Lattice (k_1..k_n)
// with every k_i >= 1 covers [(k_i - 1) delta, k_i delta] on each axis; its
// anchor is the lower corner (k - 1) delta. A convex, continuous prototype P
// is built lattice by lattice: on lattice k it is an affine piece with
// gradient (g_{k_1}, ..., g_{k_n}) drawn from a positive, strictly increasing
// series bounded by G, plus the shift c. Each lattice then gets a scale
// gamma = T(anchor) / P(anchor), and
//
//   That(x) = gamma_{i*} (Wx)_{i*},   i* = argmax_i (Wx)_i
//
// where row i of W is lattice i's affine piece (inputs augmented with 1).
//
// In symmetric mode the domain is [-R, R]^n. A lattice with negative indices
// (k_i = -j covers [-j delta, -(j - 1) delta]) reuses the affine piece of its
// all-positive mirror |k| unchanged, and its anchor is the mirrored corner.
// Positive-orthant rows come first so that duplicated rows resolve to them.

struct PrototypeOptions {
  std::size_t n = 1;
  double delta = 0.25;
  double radius = 1.0;  // R; must be a multiple of delta
  double bound = 1.0;   // G
  double shift = 1.0;   // c
  bool symmetric = false;
  // g_1, g_2, ...; defaults to g_i = G (1 - 2^-i). Must be positive,
  // strictly increasing and below G.
  std::vector<double> g_series;
};

struct LatticeApproximator {
  std::size_t n = 1;
  double delta = 0.0;
  double radius = 0.0;
  double bound = 1.0;
  double shift = 1.0;
  bool symmetric = false;
  std::size_t per_axis = 0;       // lattices along one positive half-axis
  std::vector<double> g_series;   // g_series[j - 1] == g_j
  Tensor weights;                 // K x (n + 1): gradient, then intercept + c
  std::vector<double> gamma;      // K
  std::vector<std::vector<int>> lattices;  // K signed index tuples

  std::size_t rows() const { return gamma.size(); }

  bool positive(std::size_t row) const {
    return std::all_of(lattices[row].begin(), lattices[row].end(), [](int k) { return k > 0; });
  }

  std::vector<double> anchor(std::size_t row) const {
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int k = lattices[row][i];
      a[i] = (k > 0 ? 1.0 : -1.0) * static_cast<double>(std::abs(k) - 1) * delta;
    }
    return a;
  }

  std::vector<double> center(std::size_t row) const {
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int k = lattices[row][i];
      c[i] = (k > 0 ? 1.0 : -1.0) * (static_cast<double>(std::abs(k)) - 0.5) * delta;
    }
    return c;
  }

  // (Wx)_row, accumulated over coordinates in order, intercept last.
  double response(std::size_t row, std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += weights.at(row, i) * x[i];
    return acc + weights.at(row, n);
  }

  double lower() const { return symmetric ? -radius : 0.0; }

  bool in_domain(std::span<const double> x) const {
    if (x.size() != n) return false;
    const double tol = 1e-12 * std::max(1.0, radius);
    return std::all_of(x.begin(), x.end(), [&](double v) { return v >= lower() - tol && v <= radius + tol; });
  }

  std::optional<std::size_t> row_of(std::span<const int> k) const {
    auto it = std::find_if(lattices.begin(), lattices.end(),
                           [&](const std::vector<int>& t) { return std::equal(t.begin(), t.end(), k.begin(), k.end()); });
    if (it == lattices.end()) return std::nullopt;
    return static_cast<std::size_t>(it - lattices.begin());
  }
};

namespace detail {

inline std::vector<double> default_g_series(std::size_t count, double bound) {
  std::vector<double> g(count);
  for (std::size_t j = 1; j <= count; ++j) g[j - 1] = bound * (1.0 - std::ldexp(1.0, -static_cast<int>(j)));
  return g;
}

// Odometer over tuples with each coordinate drawn from `values`, first coordinate slowest.
inline std::vector<std::vector<int>> tuples(const std::vector<int>& values, std::size_t n) {
  std::vector<std::vector<int>> out;
  std::vector<std::size_t> pos(n, 0);
  while (true) {
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = values[pos[i]];
    out.push_back(std::move(t));
    std::size_t i = n;
    while (i > 0) {
      --i;
      if (++pos[i] < values.size()) break;
      pos[i] = 0;
      if (i == 0) return out;
    }
    if (n == 0) return out;
  }
}

}  // namespace detail

/// Builds W and Gamma for target T. Intercepts are chained: lattice k takes
/// its value at its anchor from an already-built neighbour p with
/// p_i = max(k_i - 1, 1), which shares that anchor as a corner. When every
/// k_i > 1 the neighbour is the diagonal predecessor (k - 1).
inline LatticeApproximator build_prototype(const TargetFn& target, const PrototypeOptions& opts) {
  if (opts.n == 0) throw ConfigError("approximator dimension must be positive");
  if (!(opts.delta > 0.0)) throw ConfigError("lattice pitch delta must be positive");
  if (!(opts.radius > 0.0)) throw ConfigError("domain radius must be positive");
  if (!(opts.shift > 0.0)) throw ConfigError("shift c must be positive");
  if (!(opts.bound > 0.0)) throw ConfigError("series bound G must be positive");
  const double cells = opts.radius / opts.delta;
  const double rounded = std::round(cells);
  if (std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells) || rounded < 1.0) {
    throw ConfigError("radius " + std::to_string(opts.radius) + " is not a positive multiple of delta " +
                      std::to_string(opts.delta));
  }
  const auto m = static_cast<std::size_t>(rounded);

  LatticeApproximator a;
  a.n = opts.n;
  a.delta = opts.delta;
  a.radius = opts.radius;
  a.bound = opts.bound;
  a.shift = opts.shift;
  a.symmetric = opts.symmetric;
  a.per_axis = m;
  a.g_series = opts.g_series.empty() ? detail::default_g_series(m, opts.bound) : opts.g_series;
  if (a.g_series.size() < m) {
    throw ConfigError("g series has " + std::to_string(a.g_series.size()) + " terms, need " + std::to_string(m));
  }
  for (std::size_t j = 0; j < m; ++j) {
    const double g = a.g_series[j];
    if (!(g > 0.0) || !(g < opts.bound) || (j > 0 && !(g > a.g_series[j - 1]))) {
      throw ConfigError("g series must be positive, strictly increasing and below G (term " + std::to_string(j + 1) + ")");
    }
  }

  std::vector<int> positive_values, all_values;
  for (std::size_t j = 1; j <= m; ++j) positive_values.push_back(static_cast<int>(j));
  all_values = positive_values;
  if (opts.symmetric)
    for (std::size_t j = 1; j <= m; ++j) all_values.push_back(-static_cast<int>(j));

  // Positive orthant first, in lexicographic order, so every chain
  // neighbour is built before it is needed.
  a.lattices = detail::tuples(positive_values, opts.n);
  if (opts.symmetric) {
    for (auto& t : detail::tuples(all_values, opts.n)) {
      if (std::any_of(t.begin(), t.end(), [](int k) { return k < 0; })) a.lattices.push_back(std::move(t));
    }
  }
  const std::size_t K = a.lattices.size();
  a.weights = Tensor({K, opts.n + 1});
  a.gamma.assign(K, 0.0);

  std::map<std::vector<int>, std::size_t> index;
  for (std::size_t r = 0; r < K; ++r) index.emplace(a.lattices[r], r);

  // f_k(x) = grad . x + b_k  (without the shift)
  std::vector<double> intercept(K, 0.0);
  auto f_at = [&](std::size_t row, std::span<const double> x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < opts.n; ++i) acc += a.weights.at(row, i) * x[i];
    return acc + intercept[row];
  };

  for (std::size_t r = 0; r < K; ++r) {
    const auto& k = a.lattices[r];
    if (std::any_of(k.begin(), k.end(), [](int v) { return v < 0; })) {
      std::vector<int> mirror(k.size());
      for (std::size_t i = 0; i < k.size(); ++i) mirror[i] = std::abs(k[i]);
      const std::size_t src = index.at(mirror);
      for (std::size_t i = 0; i < opts.n; ++i) a.weights.at(r, i) = a.weights.at(src, i);
      intercept[r] = intercept[src];
      continue;
    }
    for (std::size_t i = 0; i < opts.n; ++i) a.weights.at(r, i) = a.g_series[static_cast<std::size_t>(k[i] - 1)];
    const auto anchor = a.anchor(r);
    std::vector<int> prev(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) prev[i] = std::max(k[i] - 1, 1);
    double f_anchor = 0.0;  // f_(1,...,1)(0) = 0
    if (prev != k) f_anchor = f_at(index.at(prev), anchor);
    double dot = 0.0;
    for (std::size_t i = 0; i < opts.n; ++i) dot += a.weights.at(r, i) * anchor[i];
    intercept[r] = f_anchor - dot;
  }

  for (std::size_t r = 0; r < K; ++r) {
    a.weights.at(r, opts.n) = intercept[r] + opts.shift;
    const auto anchor = a.anchor(r);
    const double t = target(anchor);
    if (!std::isfinite(t)) throw DataError("target is not finite at a lattice anchor");
    a.gamma[r] = t / a.response(r, anchor);
  }
  return a;
}

// Channel-out evaluation: ArgMax over all K responses (lowest index on ties).
inline std::size_t winning_row(const LatticeApproximator& a, std::span<const double> x) {
  std::size_t best = 0;
  double best_value = a.response(0, x);
  for (std::size_t r = 1; r < a.rows(); ++r) {
    const double v = a.response(r, x);
    if (v > best_value) {
      best = r;
      best_value = v;
    }
  }
  return best;
}

inline double eval_approx(const LatticeApproximator& a, std::span<const double> x) {
  if (!a.in_domain(x)) throw DataError("eval_approx: point outside the approximator domain");
  const std::size_t r = winning_row(a, x);
  return a.gamma[r] * a.response(r, x);
}

// Lattice owning an interior point (boundary points go to the lower-index side).
inline std::size_t lattice_row(const LatticeApproximator& a, std::span<const double> x) {
  std::vector<int> k(a.n);
  for (std::size_t i = 0; i < a.n; ++i) {
    const double s = x[i] / a.delta;
    if (x[i] >= 0.0 || !a.symmetric) {
      k[i] = std::clamp(static_cast<int>(std::floor(s)) + 1, 1, static_cast<int>(a.per_axis));
    } else {
      k[i] = -std::clamp(static_cast<int>(std::floor(-s)) + 1, 1, static_cast<int>(a.per_axis));
    }
  }
  auto r = a.row_of(k);
  if (!r) throw DataError("lattice_row: point outside the approximator domain");
  return *r;
}

struct ConsistencyViolation {
  std::vector<int> lattice;
  std::size_t expected_row = 0;
  std::size_t winning_row = 0;
};

struct ConsistencyReport {
  bool consistent = true;                           // over the positive orthant
  std::vector<ConsistencyViolation> violations;     // positive orthant
  std::vector<ConsistencyViolation> mixed_orthant;  // symmetric mode only, reported, not judged
};

/// At every lattice centre the argmax must pick that lattice's own row.
inline ConsistencyReport region_consistency(const LatticeApproximator& a) {
  ConsistencyReport rep;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto c = a.center(r);
    const std::size_t w = winning_row(a, c);
    if (w == r) continue;
    // A duplicated row wins with an identical affine piece; still a mismatch of regions.
    ConsistencyViolation v{a.lattices[r], r, w};
    if (a.positive(r)) {
      rep.violations.push_back(std::move(v));
      rep.consistent = false;
    } else {
      rep.mixed_orthant.push_back(std::move(v));
    }
  }
  return rep;
}

namespace detail {

// Calls fn(x) on a (q+1)^n grid covering lattice `row`, boundaries included
// when `closed`, otherwise a q^n midpoint grid.
template <typename Fn>
void for_lattice_grid(const LatticeApproximator& a, std::size_t row, std::size_t q, bool closed, Fn&& fn) {
  const auto& k = a.lattices[row];
  const std::size_t per = closed ? q + 1 : q;
  const double h = a.delta / static_cast<double>(q);
  std::vector<double> x(a.n);
  std::vector<std::size_t> pos(a.n, 0);
  while (true) {
    for (std::size_t i = 0; i < a.n; ++i) {
      const double lo = k[i] > 0 ? static_cast<double>(k[i] - 1) * a.delta : static_cast<double>(k[i]) * a.delta;
      const double offset = closed ? static_cast<double>(pos[i]) : static_cast<double>(pos[i]) + 0.5;
      x[i] = std::min(lo + offset * h, lo + a.delta);
    }
    fn(std::span<const double>(x));
    std::size_t i = a.n;
    while (true) {
      if (i == 0) return;
      --i;
      if (++pos[i] < per) break;
      pos[i] = 0;
    }
  }
}

}  // namespace detail

struct ApproxReport {
  double delta = 0.0;
  double l2_error = 0.0;  // midpoint-rule estimate of the integral of |T - That|^2
  std::size_t grid_resolution = 0;  // points per dimension per lattice
  double anchor_max_abs_err = 0.0;  // over all-positive lattices, own row at its anchor
};

/// Midpoint rule with `grid_points_per_dim` points per axis inside every
/// lattice, so no probe lands on a lattice boundary.
inline ApproxReport l2_error(const LatticeApproximator& a, const TargetFn& target, std::size_t grid_points_per_dim) {
  if (grid_points_per_dim < 8) throw ConfigError("l2_error needs at least 8 grid points per dimension per lattice");
  const std::size_t q = grid_points_per_dim;
  const double cell_volume = std::pow(a.delta / static_cast<double>(q), static_cast<double>(a.n));
  ApproxReport rep{a.delta, 0.0, q, 0.0};

  for (std::size_t r = 0; r < a.rows(); ++r) {
    double sum = 0.0;
    detail::for_lattice_grid(a, r, q, false, [&](std::span<const double> x) {
      const double diff = target(x) - eval_approx(a, x);
      sum += diff * diff;
    });
    rep.l2_error += sum * cell_volume;
    if (a.positive(r)) {
      const auto anchor = a.anchor(r);
      rep.anchor_max_abs_err =
          std::max(rep.anchor_max_abs_err, std::abs(a.gamma[r] * a.response(r, anchor) - target(anchor)));
    }
  }
  return rep;
}

// Convex prototype P(x) = max_i (Wx)_i over the positive-orthant rows.
inline double prototype(const LatticeApproximator& a, std::span<const double> x) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < a.rows(); ++r)
    if (a.positive(r)) best = std::max(best, a.response(r, x));
  return best;
}

struct OscillationCheck {
  double max_spread = 0.0;  // max over lattices of (max P - min P) on the probe grid
  double bound = 0.0;       // n G delta
  bool holds = true;
};

/// Spread of P inside each positive-orthant lattice, probed on a closed grid
/// with q intervals per axis, against n G delta.
inline OscillationCheck prototype_oscillation(const LatticeApproximator& a, std::size_t q = 8) {
  OscillationCheck out;
  out.bound = static_cast<double>(a.n) * a.bound * a.delta;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (!a.positive(r)) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    detail::for_lattice_grid(a, r, q, true, [&](std::span<const double> x) {
      const double p = prototype(a, x);
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    });
    out.max_spread = std::max(out.max_spread, hi - lo);
    if (!(hi - lo < out.bound)) out.holds = false;
  }
  return out;
}

struct PointwiseCheck {
  std::size_t lattices = 0;
  std::size_t failures = 0;
  double worst_ratio = 0.0;  // max |T - That| / (eps0 + r n G delta)
};

/// On each positive-orthant lattice, |T - That| at interior probes must stay
/// below eps0 + r n G delta, where eps0 is T's measured oscillation on the
/// lattice and r = max |gamma|. `safety` scales the bound.
inline PointwiseCheck pointwise_bound(const LatticeApproximator& a, const TargetFn& target, std::size_t q = 8,
                                      double safety = 1.01) {
  double r = 0.0;
  for (double g : a.gamma) r = std::max(r, std::abs(g));
  const double slope_term = r * static_cast<double>(a.n) * a.bound * a.delta;
  PointwiseCheck out;
  for (std::size_t row = 0; row < a.rows(); ++row) {
    if (!a.positive(row)) continue;
    double t_lo = std::numeric_limits<double>::infinity();
    double t_hi = -t_lo;
    detail::for_lattice_grid(a, row, q, true, [&](std::span<const double> x) {
      const double t = target(x);
      t_lo = std::min(t_lo, t);
      t_hi = std::max(t_hi, t);
    });
    const double limit = (t_hi - t_lo) + slope_term;
    double worst = 0.0;
    detail::for_lattice_grid(a, row, q, false,
                             [&](std::span<const double> x) { worst = std::max(worst, std::abs(target(x) - eval_approx(a, x))); });
    ++out.lattices;
    if (!(worst < safety * limit) && !(limit == 0.0 && worst == 0.0)) ++out.failures;
    if (limit > 0.0) out.worst_ratio = std::max(out.worst_ratio, worst / limit);
  }
  return out;
}

/// The approximator as a layer stack: dense to K candidates, one ArgMax
/// channel-out group over all of them, then a dense readout with weights Gamma.
inline Network as_channel_out_network(const LatticeApproximator& a) {
  const std::size_t K = a.rows();
  DenseLayer hidden{Tensor({K, a.n}), Tensor({K})};
  for (std::size_t r = 0; r < K; ++r) {
    for (std::size_t i = 0; i < a.n; ++i) hidden.weight.at(r, i) = a.weights.at(r, i);
    hidden.bias[r] = a.weights.at(r, a.n);
  }
  DenseLayer readout{Tensor({1, K}), Tensor({1})};
  for (std::size_t r = 0; r < K; ++r) readout.weight.at(0, r) = a.gamma[r];
  Network net{{a.n}, {}};
  net.layers.push_back(std::move(hidden));
  if (K > 1) net.layers.push_back(ChannelOutLayer{K, ChannelSelector::argmax()});
  net.layers.push_back(std::move(readout));
  return net;
}

// ---------------------------------------------------------------------------
// Built-in targets on [0, 1]^n (and beyond for symmetric domains)

inline std::vector<std::string> target_names() { return {"constant", "linear", "quadratic", "sine", "step"}; }

// Unit jump on the hyperplane x_0 = jump. Each lattice interpolates at its
// lower corner, so the lattice holding the jump is wrong from the jump to its
// upper face: a length of ceil(jump / delta) delta - jump along x_0. Halving
// delta only shrinks that when the jump sits in the lower half of its cell
// (0.6 does for pitches 0.5, 0.25, 0.125; 0.3 does not).
inline TargetFn make_step(double jump) {
  return [jump](std::span<const double> x) { return x[0] < jump ? 0.0 : 1.0; };
}

inline TargetFn make_target(const std::string& name) {
  if (name == "constant") return [](std::span<const double>) { return 1.0; };
  if (name == "linear")
    return [](std::span<const double> x) {
      double s = 0.0;
      for (double v : x) s += v;
      return 1.0 + s;
    };
  if (name == "quadratic")
    return [](std::span<const double> x) {
      double s = 0.0;
      for (double v : x) s += v * v;
      return s;
    };
  if (name == "sine")
    return [](std::span<const double> x) {
      double s = 0.0;
      for (double v : x) s += std::sin(2.0 * std::numbers::pi * v);
      return s;
    };
  if (name == "step") return make_step(0.6);
  throw ConfigError("unknown approx target '" + name + "' (expected constant, linear, quadratic, sine, step)");
}

}  // namespace chanout
