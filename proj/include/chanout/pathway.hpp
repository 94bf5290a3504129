#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "chanout/dataset.hpp"
#include "chanout/errors.hpp"
#include "chanout/layers.hpp"
#include "chanout/network.hpp"
#include "chanout/trainer.hpp"

namespace chanout {

/// One row per sample, one column per channel-out/maxout group in network
/// order. An entry is the selected index within its group; for selectors
/// that open l > 1 channels it is the rank of the selected subset among all
/// l-subsets in lexicographic order, so entries lie in [0, C(k, l)).
struct PathwayMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> entries;  // row-major
  std::vector<int> labels;
  std::vector<std::size_t> cardinality;  // number of possible codes per column

  int at(std::size_t r, std::size_t c) const { return entries[r * cols + c]; }
  std::span<const int> row(std::size_t r) const { return std::span<const int>(entries).subspan(r * cols, cols); }
};

namespace detail {

inline std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Lexicographic rank of an ascending l-subset of {0..k-1}.
inline int subset_rank(std::span<const int> subset, std::size_t k) {
  const std::size_t l = subset.size();
  std::size_t rank = 0;
  int prev = -1;
  for (std::size_t i = 0; i < l; ++i) {
    for (int v = prev + 1; v < subset[i]; ++v) rank += binomial(k - 1 - static_cast<std::size_t>(v), l - 1 - i);
    prev = subset[i];
  }
  return static_cast<int>(rank);
}

}  // namespace detail

inline std::vector<int> pathway_row(const Network& net, const Trace& trace) {
  std::vector<int> row;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!std::holds_alternative<ChannelOutLayer>(net.layers[i]) && !std::holds_alternative<MaxoutLayer>(net.layers[i]))
      continue;
    const auto& sel = trace.layers[i].selection;
    for (std::size_t g = 0; g < sel.groups(); ++g) {
      auto idx = sel.group(g);
      row.push_back(sel.per_group == 1 ? idx[0] : detail::subset_rank(idx, sel.k));
    }
  }
  return row;
}

/// Inference-mode pathway patterns of every sample.
inline PathwayMatrix record_pathways(const Network& net, const Dataset& data) {
  const bool has_groups = std::any_of(net.layers.begin(), net.layers.end(), [](const Layer& l) {
    return std::holds_alternative<ChannelOutLayer>(l) || std::holds_alternative<MaxoutLayer>(l);
  });
  if (!has_groups) throw ConfigError("record_pathways: network has no channel-out or maxout groups");

  PathwayMatrix m;
  Rng unused(0);
  for (const auto& s : data.samples) {
    auto r = network_forward(net, s.features, Mode::Infer, unused);
    auto row = pathway_row(net, r.trace);
    if (m.rows == 0) {
      m.cols = row.size();
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& sel = r.trace.layers[i].selection;
        if (sel.indices.empty()) continue;
        m.cardinality.insert(m.cardinality.end(), sel.groups(), detail::binomial(sel.k, sel.per_group));
      }
    }
    m.entries.insert(m.entries.end(), row.begin(), row.end());
    m.labels.push_back(s.label);
    ++m.rows;
  }
  return m;
}

// ---------------------------------------------------------------------------
// PCA by power iteration with deflation

struct PcaResult {
  Tensor coordinates;                 // rows x dims
  Tensor components;                  // dims x cols, unit rows
  std::vector<double> eigenvalues;    // of the (1/n) covariance, descending
  std::vector<double> variance_share; // eigenvalue / total variance
  double total_variance = 0.0;
};

struct PcaOptions {
  std::size_t dims = 3;
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

/// Projects mean-centred rows onto the top `dims` covariance eigenvectors.
/// Each eigenvector is found by power iteration, re-orthogonalised against
/// the earlier ones every step (deflation by projection), and its sign is
/// fixed so the largest-magnitude component is positive.
inline PcaResult pca_project(const Tensor& data, const PcaOptions& opts = {}) {
  if (data.rank() != 2) throw ShapeError("pca_project expects a rows x cols matrix");
  const std::size_t n = data.dim(0), d = data.dim(1), dims = opts.dims;
  if (n < dims + 1) {
    throw DataError("pca_project needs at least " + std::to_string(dims + 1) + " samples, got " + std::to_string(n));
  }
  if (dims == 0 || dims > d) throw ConfigError("pca dims must lie in [1, columns]");

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += data.at(r, c);
  for (auto& m : mean) m /= static_cast<double>(n);
  Tensor centered({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered.at(r, c) = data.at(r, c) - mean[c];

  Tensor cov({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += centered.at(r, i) * centered.at(r, j);
      cov.at(i, j) = cov.at(j, i) = acc / static_cast<double>(n);
    }
  }

  PcaResult out{Tensor({n, dims}), Tensor({dims, d}), {}, {}, 0.0};
  for (std::size_t i = 0; i < d; ++i) out.total_variance += cov.at(i, i);

  auto orthogonalize = [&](std::vector<double>& v, std::size_t found) {
    for (std::size_t q = 0; q < found; ++q) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += v[c] * out.components.at(q, c);
      for (std::size_t c = 0; c < d; ++c) v[c] -= dot * out.components.at(q, c);
    }
  };
  auto normalize = [&](std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& x : v) x /= norm;
    return norm;
  };
  auto fix_sign = [&](std::vector<double>& v) {
    std::size_t big = 0;
    for (std::size_t c = 1; c < d; ++c)
      if (std::abs(v[c]) > std::abs(v[big])) big = c;
    if (v[big] < 0.0)
      for (auto& x : v) x = -x;
  };

  for (std::size_t q = 0; q < dims; ++q) {
    // Deterministic start: all-ones plus a ramp, so no eigenvector is missed by symmetry.
    std::vector<double> v(d), next(d);
    for (std::size_t c = 0; c < d; ++c) v[c] = 1.0 + static_cast<double>(c + 1) / static_cast<double>(d + 1);
    orthogonalize(v, q);
    if (normalize(v) < 1e-300) {
      std::fill(v.begin(), v.end(), 0.0);
    }
    double lambda = 0.0;
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += cov.at(i, j) * v[j];
        next[i] = acc;
      }
      orthogonalize(next, q);
      lambda = normalize(next);
      if (lambda < 1e-14 * std::max(out.total_variance, 1.0)) {
        // Remaining spectrum is (numerically) zero; any orthonormal completion will do.
        lambda = 0.0;
        break;
      }
      fix_sign(next);
      double diff = 0.0;
      for (std::size_t c = 0; c < d; ++c) diff = std::max(diff, std::abs(next[c] - v[c]));
      v.swap(next);
      if (diff < opts.tolerance) break;
    }
    if (lambda == 0.0) {
      // Pick the first basis vector that survives orthogonalisation.
      for (std::size_t e = 0; e < d; ++e) {
        std::fill(v.begin(), v.end(), 0.0);
        v[e] = 1.0;
        orthogonalize(v, q);
        orthogonalize(v, q);
        if (normalize(v) > 1e-6) break;
      }
    }
    fix_sign(v);
    // Rayleigh quotient for the eigenvalue estimate.
    double rq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += cov.at(i, j) * v[j];
      rq += v[i] * acc;
    }
    for (std::size_t c = 0; c < d; ++c) out.components.at(q, c) = v[c];
    out.eigenvalues.push_back(std::max(rq, 0.0));
    out.variance_share.push_back(out.total_variance > 0.0 ? std::max(rq, 0.0) / out.total_variance : 0.0);
  }

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t q = 0; q < dims; ++q) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += centered.at(r, c) * out.components.at(q, c);
      out.coordinates.at(r, q) = acc;
    }
  }
  return out;
}

inline Tensor to_tensor(const PathwayMatrix& m) {
  Tensor t({m.rows, m.cols});
  for (std::size_t i = 0; i < m.entries.size(); ++i) t[i] = m.entries[i];
  return t;
}

inline PcaResult pca_project(const PathwayMatrix& m, const PcaOptions& opts = {}) {
  if (m.rows == 0 || m.cols == 0) throw DataError("pca_project: empty pathway matrix");
  return pca_project(to_tensor(m), opts);
}

// ---------------------------------------------------------------------------
// Cluster separation

struct ClusterSeparation {
  double intra = 0.0;
  double inter = 0.0;
  double ratio = 0.0;  // +inf when intra == 0
};

/// Mean normalised Hamming distance over same-class and different-class row
/// pairs. Entries are categorical: any mismatch counts 1. Computed from
/// per-column value counts rather than by enumerating pairs.
inline ClusterSeparation cluster_separation(const PathwayMatrix& m, std::span<const int> labels) {
  if (labels.size() != m.rows) throw DataError("cluster_separation: label count does not match rows");
  std::map<int, std::size_t> class_size;
  for (int l : labels) ++class_size[l];
  if (class_size.size() < 2) throw DataError("cluster_separation needs at least 2 classes");
  for (const auto& [label, count] : class_size) {
    if (count < 2) throw DataError("cluster_separation: class " + std::to_string(label) + " has fewer than 2 samples");
  }
  if (m.cols == 0) throw DataError("cluster_separation: pathway matrix has no columns");

  auto pairs = [](double c) { return c * (c - 1.0) / 2.0; };
  const double n = static_cast<double>(m.rows);
  double same_pairs = 0.0;
  for (const auto& [label, count] : class_size) same_pairs += pairs(static_cast<double>(count));
  const double all_pairs = pairs(n);
  const double cross_pairs = all_pairs - same_pairs;

  double intra_mismatch = 0.0, all_mismatch = 0.0;
  std::map<int, double> by_value;
  std::map<std::pair<int, int>, double> by_class_value;
  for (std::size_t c = 0; c < m.cols; ++c) {
    by_value.clear();
    by_class_value.clear();
    for (std::size_t r = 0; r < m.rows; ++r) {
      by_value[m.at(r, c)] += 1.0;
      by_class_value[{labels[r], m.at(r, c)}] += 1.0;
    }
    double equal_all = 0.0, equal_same = 0.0;
    for (const auto& [v, cnt] : by_value) equal_all += pairs(cnt);
    for (const auto& [key, cnt] : by_class_value) equal_same += pairs(cnt);
    all_mismatch += all_pairs - equal_all;
    intra_mismatch += same_pairs - equal_same;
  }
  const double cols = static_cast<double>(m.cols);
  ClusterSeparation s;
  s.intra = intra_mismatch / (same_pairs * cols);
  s.inter = (all_mismatch - intra_mismatch) / (cross_pairs * cols);
  s.ratio = s.intra == 0.0 ? std::numeric_limits<double>::infinity() : s.inter / s.intra;
  return s;
}

inline ClusterSeparation cluster_separation(const PathwayMatrix& m) { return cluster_separation(m, m.labels); }

// ---------------------------------------------------------------------------
// Pathway switching during training

struct SwitchEvent {
  std::size_t epoch = 0;
  std::size_t probe = 0;
  std::size_t group = 0;
  bool switched = false;
};

struct SwitchLog {
  std::vector<std::vector<std::size_t>> counts;  // probe x group
  std::vector<SwitchEvent> events;               // epochs 2.. in (epoch, probe, group) order
  std::vector<std::size_t> per_epoch;            // total switches per epoch, index 0 == epoch 1

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : per_epoch) t += c;
    return t;
  }
};

/// Records probe pathways after every epoch and counts per-group changes
/// between consecutive epochs. Plug observe() into train()'s epoch hook.
class SwitchTracker {
 public:
  explicit SwitchTracker(Dataset probes) : probes_(std::move(probes)) {}

  void observe(std::size_t epoch, const Network& net) {
    const PathwayMatrix now = record_pathways(net, probes_);
    if (log_.counts.empty()) log_.counts.assign(now.rows, std::vector<std::size_t>(now.cols, 0));
    std::size_t switches = 0;
    if (has_previous_) {
      for (std::size_t p = 0; p < now.rows; ++p) {
        for (std::size_t g = 0; g < now.cols; ++g) {
          const bool changed = now.at(p, g) != previous_.at(p, g);
          log_.events.push_back({epoch, p, g, changed});
          if (changed) {
            ++log_.counts[p][g];
            ++switches;
          }
        }
      }
    }
    log_.per_epoch.push_back(switches);
    previous_ = now;
    has_previous_ = true;
  }

  EpochHook hook() {
    return [this](const EpochMetrics& m, const Network& net) { observe(m.epoch, net); };
  }

  const SwitchLog& log() const { return log_; }

 private:
  Dataset probes_;
  PathwayMatrix previous_;
  bool has_previous_ = false;
  SwitchLog log_;
};

}  // namespace chanout
