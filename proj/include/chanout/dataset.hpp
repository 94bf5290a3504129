#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chanout/errors.hpp"
#include "chanout/rng.hpp"
#include "chanout/tensor.hpp"

namespace chanout {

struct Sample {
  Tensor features;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t classes = 0;
  Shape feature_shape;
  std::vector<long> label_values;  // original label of each dense class id, when remapped

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline void validate_dataset(const Dataset& data) {
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    if (s.features.shape() != data.feature_shape) {
      throw DataError("sample " + std::to_string(i) + " has shape " + shape_string(s.features.shape()) +
                      ", expected " + shape_string(data.feature_shape));
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= data.classes) {
      throw DataError("sample " + std::to_string(i) + " label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(data.classes) + ")");
    }
  }
}

inline Dataset subset(const Dataset& data, const std::vector<std::size_t>& rows) {
  Dataset out{{}, data.classes, data.feature_shape, data.label_values};
  out.samples.reserve(rows.size());
  for (auto r : rows) out.samples.push_back(data.samples.at(r));
  return out;
}

/// Shuffled split; the first round(test_fraction * n) shuffled rows form the test set.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, Rng rng) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return {subset(data, train), subset(data, test)};
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale data

enum class SyntheticKind { Blobs, Spirals };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Spirals;
  std::size_t classes = 2;
  std::size_t samples_per_class = 500;
  double noise = 0.1;
  double turns = 1.25;  // spirals only
};

/// Blobs: 2-D isotropic Gaussians (stddev = noise) centred on a radius-2
/// circle. Spirals: one arm per class, radius growing linearly to 1 over
/// `turns` revolutions, angular jitter with stddev = noise radians.
inline Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
  if (!(spec.noise >= 0.0)) throw ConfigError("noise must be non-negative");
  Rng rng(seed);
  Dataset data{{}, spec.classes, {2}, {}};
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double phase = two_pi * static_cast<double>(c) / static_cast<double>(spec.classes);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      double x, y;
      if (spec.kind == SyntheticKind::Blobs) {
        x = 2.0 * std::cos(phase) + spec.noise * rng.normal();
        y = 2.0 * std::sin(phase) + spec.noise * rng.normal();
      } else {
        const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(spec.samples_per_class);
        const double theta = spec.turns * two_pi * t + phase + spec.noise * rng.normal();
        x = t * std::cos(theta);
        y = t * std::sin(theta);
      }
      data.samples.push_back({Tensor::vector({x, y}), static_cast<int>(c)});
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// CSV datasets: rows `label,f1,f2,...`, optional header `label,c,h,w`.

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    fields.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Parses CSV text. Labels must be integers and are remapped to dense ids in
/// ascending order of their values; `label_values` keeps the mapping.
inline Dataset parse_csv_dataset(std::istream& in, const std::string& name = "<csv>") {
  std::string line;
  std::size_t row = 0;
  Shape declared;
  std::vector<std::pair<long, Tensor>> rows;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string_view view(line);
    if (view.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto fields = detail::split_csv(view);
    if (rows.empty() && declared.empty() && fields[0] == "label") {
      if (fields.size() == 4) {
        Shape dims;
        for (std::size_t f = 1; f < 4; ++f) {
          std::size_t d = 0;
          if (!detail::parse_number(fields[f], d) || d == 0) {
            throw DataError(name + " row " + std::to_string(row) + ": bad image dimension '" +
                            std::string(fields[f]) + "'");
          }
          dims.push_back(d);
        }
        declared = dims;
        width = shape_size(dims);
      }
      continue;
    }
    if (fields.size() < 2) throw DataError(name + " row " + std::to_string(row) + ": needs a label and features");
    if (width == 0) width = fields.size() - 1;
    if (fields.size() - 1 != width) {
      throw DataError(name + " row " + std::to_string(row) + ": ragged row with " + std::to_string(fields.size() - 1) +
                      " features, expected " + std::to_string(width));
    }
    long label = 0;
    if (!detail::parse_number(fields[0], label)) {
      throw DataError(name + " row " + std::to_string(row) + ": non-integer label '" + std::string(fields[0]) + "'");
    }
    std::vector<double> feats(width);
    for (std::size_t f = 0; f < width; ++f) {
      if (!detail::parse_number(fields[f + 1], feats[f]) || !std::isfinite(feats[f])) {
        throw DataError(name + " row " + std::to_string(row) + ": non-numeric field '" + std::string(fields[f + 1]) +
                        "'");
      }
    }
    Shape shape = declared.empty() ? Shape{width} : declared;
    rows.emplace_back(label, Tensor(shape, std::move(feats)));
  }
  if (rows.empty()) throw DataError(name + ": no data rows");

  std::map<long, int> ids;
  for (const auto& r : rows) ids.emplace(r.first, 0);
  Dataset data{{}, ids.size(), rows.front().second.shape(), {}};
  int next = 0;
  for (auto& [value, id] : ids) {
    id = next++;
    data.label_values.push_back(value);
  }
  for (auto& r : rows) data.samples.push_back({std::move(r.second), ids.at(r.first)});
  return data;
}

inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path);
  return parse_csv_dataset(in, path);
}

}  // namespace chanout
