#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "chanout/network.hpp"

namespace chanout {

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t samples_per_tensor = 20;  // random entries probed per parameter tensor
  std::uint64_t seed = 7;               // entry sampling and the replayed dropout stream
  // Denominator floor for the relative error: |a - n| / max(|a|, |n|, floor).
  double rel_floor = 1e-4;
};

struct LayerGradStats {
  std::size_t layer = 0;
  std::string kind;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that flipped a routing decision
  double max_rel_err = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool boundary_flag = false;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<LayerGradStats> layers;  // one entry per parameterised layer
};

/// Central finite differences of the loss against backprop on a random
/// subsample of parameters. Dropout masks are replayed from a fixed stream so
/// every probe sees the same sub-network. A probe whose +/- eps evaluation
/// changes any selection or pool winner sits on a kink: it is skipped and
/// flagged, never compared.
inline GradCheckResult grad_check(const Network& net, const Tensor& input, int label,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0.0)) throw ConfigError("grad_check eps must be positive");
  Network probe = net;
  const Rng dropout_seed = Rng(opts.seed).substream("dropout");

  auto run = [&](const Network& n) {
    Rng rng = dropout_seed;
    return network_loss(n, input, label, Mode::Train, rng);
  };

  const auto base = run(probe);
  const auto analytic = network_backward(probe, base.forward.trace, base.grad_logits);

  auto params = parameters(probe);
  const auto owners = parameter_owners(probe);
  Rng pick = Rng(opts.seed).substream("entries");

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (result.layers.empty() || result.layers.back().layer != owners[t]) {
      result.layers.push_back({owners[t], layer_name(probe.layers[owners[t]]), 0, 0, 0.0});
    }
    auto& stats = result.layers.back();
    Tensor& p = *params[t];
    std::vector<std::size_t> entries(p.size());
    for (std::size_t e = 0; e < entries.size(); ++e) entries[e] = e;
    pick.shuffle(entries);
    entries.resize(std::min(entries.size(), opts.samples_per_tensor));
    std::sort(entries.begin(), entries.end());

    for (auto e : entries) {
      const double saved = p[e];
      p[e] = saved + opts.eps;
      const auto plus = run(probe);
      p[e] = saved - opts.eps;
      const auto minus = run(probe);
      p[e] = saved;
      if (!same_routing(plus.forward.trace, base.forward.trace) ||
          !same_routing(minus.forward.trace, base.forward.trace)) {
        ++stats.skipped;
        ++result.skipped;
        result.boundary_flag = true;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * opts.eps);
      const double a = analytic.params[t][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.rel_floor});
      const double rel = std::abs(a - numeric) / denom;
      stats.max_rel_err = std::max(stats.max_rel_err, rel);
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++stats.checked;
      ++result.checked;
    }
  }
  return result;
}

}  // namespace chanout
