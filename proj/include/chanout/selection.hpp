#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/rng.hpp"

namespace chanout {

enum class SelectorKind { ArgMax, ArgMin, ArgMedian, TopL, AbsMax };

/// Channel selection function: maps the k activations of a group to the
/// indices that stay open. Ties always go to the lowest index.
struct ChannelSelector {
  SelectorKind kind = SelectorKind::ArgMax;
  std::size_t l = 1;  // only TopL may select more than one channel

  static ChannelSelector argmax() { return {SelectorKind::ArgMax, 1}; }
  static ChannelSelector argmin() { return {SelectorKind::ArgMin, 1}; }
  static ChannelSelector argmedian() { return {SelectorKind::ArgMedian, 1}; }
  static ChannelSelector absmax() { return {SelectorKind::AbsMax, 1}; }
  static ChannelSelector top(std::size_t l) { return {SelectorKind::TopL, l}; }

  std::size_t count() const { return kind == SelectorKind::TopL ? l : 1; }

  friend bool operator==(const ChannelSelector&, const ChannelSelector&) = default;
};

inline std::string to_string(const ChannelSelector& s) {
  switch (s.kind) {
    case SelectorKind::ArgMax: return "argmax";
    case SelectorKind::ArgMin: return "argmin";
    case SelectorKind::ArgMedian: return "argmedian";
    case SelectorKind::AbsMax: return "absmax";
    case SelectorKind::TopL: return "topl:" + std::to_string(s.l);
  }
  return "?";
}

// Accepts argmax, argmin, argmedian, absmax, topl:<l>.
inline ChannelSelector parse_selector(std::string_view text) {
  if (text == "argmax") return ChannelSelector::argmax();
  if (text == "argmin") return ChannelSelector::argmin();
  if (text == "argmedian") return ChannelSelector::argmedian();
  if (text == "absmax") return ChannelSelector::absmax();
  if (text.starts_with("topl:")) {
    auto digits = text.substr(5);
    std::size_t l = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), l);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && l >= 1) {
      return ChannelSelector::top(l);
    }
  }
  throw ConfigError("unknown selector '" + std::string(text) +
                    "' (expected argmax, argmin, argmedian, topl:<l>, absmax)");
}

inline void validate_selector(const ChannelSelector& s, std::size_t k) {
  if (k < 2) throw ConfigError("selection needs a group of at least 2 candidates, got " + std::to_string(k));
  if (s.kind == SelectorKind::TopL && (s.l < 1 || s.l >= k)) {
    throw ConfigError("topl needs 1 <= l < k, got l=" + std::to_string(s.l) + " k=" + std::to_string(k));
  }
  if (s.kind != SelectorKind::TopL && s.l != 1) {
    throw ConfigError(to_string(s) + " selects exactly one channel");
  }
}

/// Sorted, distinct indices into a group.
class IndexSet {
 public:
  IndexSet() = default;
  explicit IndexSet(std::vector<int> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
  }
  IndexSet(std::initializer_list<int> indices) : IndexSet(std::vector<int>(indices)) {}

  std::size_t size() const { return indices_.size(); }
  bool contains(int i) const { return std::binary_search(indices_.begin(), indices_.end(), i); }
  std::span<const int> indices() const { return indices_; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  std::vector<int> indices_;
};

namespace detail {

inline void check_finite_group(std::span<const double> a) {
  for (double v : a) {
    if (std::isnan(v)) throw DataError("NaN activation in channel group");
  }
}

}  // namespace detail

/// Writes selector.count() ascending indices into `out`. Validation of the
/// selector against k is the caller's job; NaN input throws DataError.
inline void select_into(const ChannelSelector& s, std::span<const double> a, std::span<int> out) {
  detail::check_finite_group(a);
  const std::size_t k = a.size();
  switch (s.kind) {
    case SelectorKind::ArgMax: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i)
        if (a[i] > a[best]) best = i;
      out[0] = static_cast<int>(best);
      return;
    }
    case SelectorKind::ArgMin: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i)
        if (a[i] < a[best]) best = i;
      out[0] = static_cast<int>(best);
      return;
    }
    case SelectorKind::AbsMax: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i)
        if (std::abs(a[i]) > std::abs(a[best])) best = i;
      out[0] = static_cast<int>(best);
      return;
    }
    case SelectorKind::ArgMedian: {
      // Lower median value, then the first index holding it.
      std::vector<double> sorted(a.begin(), a.end());
      auto mid = sorted.begin() + static_cast<std::ptrdiff_t>((k - 1) / 2);
      std::nth_element(sorted.begin(), mid, sorted.end());
      const double m = *mid;
      std::size_t i = 0;
      while (a[i] != m) ++i;
      out[0] = static_cast<int>(i);
      return;
    }
    case SelectorKind::TopL: {
      std::vector<int> order(k);
      for (std::size_t i = 0; i < k; ++i) order[i] = static_cast<int>(i);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s.l), order.end(),
                        [&](int x, int y) { return a[x] > a[y] || (a[x] == a[y] && x < y); });
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s.l));
      std::copy_n(order.begin(), s.l, out.begin());
      return;
    }
  }
}

inline IndexSet select(const ChannelSelector& s, std::span<const double> a) {
  validate_selector(s, a.size());
  std::vector<int> out(s.count());
  select_into(s, a, out);
  return IndexSet(std::move(out));
}

// h_i = a_i if i is selected, else 0.
inline std::vector<double> apply_mask(std::span<const double> a, const IndexSet& idx) {
  std::vector<double> h(a.size(), 0.0);
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= a.size()) {
      throw InternalError("apply_mask: index " + std::to_string(i) + " outside group of " +
                          std::to_string(a.size()));
    }
    h[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
  }
  return h;
}

// Per-channel selection frequency over n_samples vectors produced by `fill`.
template <typename Fill>
std::vector<double> selection_frequencies(const ChannelSelector& s, std::size_t k,
                                          std::size_t n_samples, Fill&& fill) {
  validate_selector(s, k);
  if (n_samples < 1000) throw ConfigError("selection balance needs at least 1000 samples");
  std::vector<double> a(k), freq(k, 0.0);
  std::vector<int> out(s.count());
  for (std::size_t n = 0; n < n_samples; ++n) {
    fill(std::span<double>(a));
    select_into(s, a, out);
    for (int i : out) freq[static_cast<std::size_t>(i)] += 1.0;
  }
  for (auto& f : freq) f /= static_cast<double>(n_samples);
  return freq;
}

/// Fraction of i.i.d. standard-normal input vectors for which each channel
/// is selected.
inline std::vector<double> selection_balance_stat(const ChannelSelector& s, std::size_t k,
                                                  std::size_t n_samples, Rng& rng) {
  return selection_frequencies(s, k, n_samples, [&](std::span<double> a) {
    for (auto& v : a) v = rng.normal();
  });
}

}  // namespace chanout
