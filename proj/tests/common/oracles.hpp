#pragma once

// Brute-force reference implementations used only by tests. They follow the
// definitions directly and ignore every performance concern.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "chanout/chanout.hpp"

namespace oracle {

using chanout::ChannelSelector;
using chanout::SelectorKind;
using chanout::Tensor;

// Selected indices by sorting (value, index) pairs; ties resolve to the lower index.
inline std::vector<int> select(const ChannelSelector& s, const std::vector<double>& a) {
  const int k = static_cast<int>(a.size());
  std::vector<int> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto by = [&](auto key) {
    std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return key(x) < key(y); });
  };
  switch (s.kind) {
    case SelectorKind::ArgMax:
      by([&](int i) { return -a[i]; });
      return {idx[0]};
    case SelectorKind::ArgMin:
      by([&](int i) { return a[i]; });
      return {idx[0]};
    case SelectorKind::AbsMax:
      by([&](int i) { return -std::abs(a[i]); });
      return {idx[0]};
    case SelectorKind::ArgMedian: {
      // lower median value, then the lowest index holding it
      std::vector<double> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      const double med = sorted[static_cast<std::size_t>((k - 1) / 2)];
      for (int i = 0; i < k; ++i)
        if (a[i] == med) return {i};
      return {};
    }
    case SelectorKind::TopL: {
      by([&](int i) { return -a[i]; });
      std::vector<int> out(idx.begin(), idx.begin() + static_cast<long>(s.l));
      std::sort(out.begin(), out.end());
      return out;
    }
  }
  return {};
}

inline std::vector<double> mask(const std::vector<double>& a, const std::vector<int>& keep) {
  std::vector<double> h(a.size(), 0.0);
  for (int i : keep) h[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
  return h;
}

// out[f][oy][ox] = sum_c sum_r sum_s in[c][oy*st + r][ox*st + s] * w[f][c][r][s]
inline Tensor conv(const Tensor& in, const Tensor& w, std::size_t st) {
  const auto C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const auto F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const auto OH = (H - KH) / st + 1, OW = (W - KW) / st + 1;
  Tensor out({F, OH, OW});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t r = 0; r < KH; ++r)
            for (std::size_t s = 0; s < KW; ++s)
              acc += in[(c * H + oy * st + r) * W + ox * st + s] * w[((f * C + c) * KH + r) * KW + s];
        out[(f * OH + oy) * OW + ox] = acc;
      }
  return out;
}

// Adjoint of conv: scatters every output gradient back onto its patch.
inline chanout::ConvGrads conv_backward(const Tensor& in, const Tensor& w, std::size_t st, const Tensor& gout) {
  const auto C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const auto F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const auto OH = gout.dim(1), OW = gout.dim(2);
  chanout::ConvGrads g{Tensor(in.shape()), Tensor(w.shape())};
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const double go = gout[(f * OH + oy) * OW + ox];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t r = 0; r < KH; ++r)
            for (std::size_t s = 0; s < KW; ++s) {
              const std::size_t ii = (c * H + oy * st + r) * W + ox * st + s;
              const std::size_t wi = ((f * C + c) * KH + r) * KW + s;
              g.input[ii] += go * w[wi];
              g.filters[wi] += go * in[ii];
            }
      }
  return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
