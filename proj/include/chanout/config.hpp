#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "chanout/approximator.hpp"
#include "chanout/csv.hpp"
#include "chanout/dataset.hpp"
#include "chanout/errors.hpp"
#include "chanout/selection.hpp"
#include "chanout/trainer.hpp"

namespace chanout {

// Flat `key = value` run description. One line per setting, `#` starts a
// comment. The hidden stack is a single key:
//
//   layers = conv 64 k5 s1 | channelout | pool 2 s2 | dense 32 | maxout 2
//
// Layer tokens: dense <units>, conv <filters> k<kernel> [s<stride>],
// pool <window> [s<stride>], channelout [<group>] [<selector>],
// maxout [<group>], dropout <p>. A channel-out or maxout layer without a
// group takes the next entry of `group_sizes` (e.g. 2-2-2-5).

enum class DataSource { Spirals, Blobs, Csv };

inline const char* data_source_name(DataSource d) {
  switch (d) {
    case DataSource::Spirals: return "spirals";
    case DataSource::Blobs: return "blobs";
    case DataSource::Csv: return "csv";
  }
  return "?";
}

struct DataConfig {
  DataSource source = DataSource::Spirals;
  std::string path;       // csv only
  std::string test_path;  // csv only; empty -> split off test_fraction
  std::size_t samples_per_class = 500;
  double noise = 0.1;
  double turns = 1.25;
  double test_fraction = 0.2;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ApproxConfig {
  std::string target = "quadratic";
  std::size_t n = 1;
  std::vector<double> deltas{0.5, 0.25, 0.125};
  double radius = 1.0;
  std::size_t grid = 16;
  bool symmetric = false;

  friend bool operator==(const ApproxConfig&, const ApproxConfig&) = default;
};

struct BenchConfig {
  std::size_t m = 256;
  std::size_t d = 1024;
  std::size_t k = 2;
  ChannelSelector selector = ChannelSelector::argmax();
  std::size_t trials = 20;

  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct RunSpec {
  NetworkConfig network;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  DataConfig data;
  std::uint64_t seed = 42;
  std::size_t switch_probes = 32;
  double gradcheck_eps = 1e-5;
  std::size_t gradcheck_samples = 20;
  ApproxConfig approx;
  BenchConfig bench;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct ConfigParse {
  std::optional<RunSpec> spec;
  std::vector<std::string> errors;  // "line N: message", in file order
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  for (auto w : split(s, ' '))
    if (!w.empty()) out.push_back(w);
  return out;
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "0" || s == "no") return out = false, true;
  return false;
}

inline bool parse_shape(std::string_view s, Shape& out) {
  Shape dims;
  for (auto part : split(s, 'x')) {
    std::size_t d = 0;
    if (!parse_number(part, d) || d == 0) return false;
    dims.push_back(d);
  }
  out = std::move(dims);
  return true;
}

// Parses one layer token. Returns an error message or empty on success;
// `needs_group` is set when the group comes from group_sizes.
inline std::string parse_layer(std::string_view text, LayerSpec& spec, bool& needs_group) {
  auto w = words(text);
  needs_group = false;
  if (w.empty()) return "empty layer entry";
  const std::string_view kind = w[0];
  auto count = [&](std::string_view s, std::size_t& out) { return parse_number(s, out) && out > 0; };
  auto prefixed = [&](std::string_view s, char prefix, std::size_t& out) {
    return s.size() > 1 && s[0] == prefix && count(s.substr(1), out);
  };
  if (kind == "dense") {
    spec.type = LayerType::Dense;
    if (w.size() != 2 || !count(w[1], spec.units)) return "expected 'dense <units>'";
  } else if (kind == "conv") {
    spec.type = LayerType::Conv;
    if (w.size() < 3 || w.size() > 4 || !count(w[1], spec.units) || !prefixed(w[2], 'k', spec.kernel) ||
        (w.size() == 4 && !prefixed(w[3], 's', spec.stride))) {
      return "expected 'conv <filters> k<kernel> [s<stride>]'";
    }
  } else if (kind == "pool") {
    spec.type = LayerType::Pool;
    if (w.size() < 2 || w.size() > 3 || !count(w[1], spec.window)) return "expected 'pool <window> [s<stride>]'";
    spec.stride = spec.window;
    if (w.size() == 3 && !prefixed(w[2], 's', spec.stride)) return "expected 'pool <window> [s<stride>]'";
  } else if (kind == "channelout" || kind == "maxout") {
    spec.type = kind == "channelout" ? LayerType::ChannelOut : LayerType::Maxout;
    std::size_t next = 1;
    if (next < w.size() && count(w[next], spec.group)) ++next;
    else needs_group = true;
    if (spec.type == LayerType::ChannelOut && next < w.size()) {
      try {
        spec.selector = parse_selector(w[next]);
      } catch (const ConfigError& e) {
        return e.what();
      }
      ++next;
    }
    if (next != w.size()) return "expected '" + std::string(kind) + " [<group>]" +
                                 (spec.type == LayerType::ChannelOut ? " [<selector>]'" : "'");
  } else if (kind == "dropout") {
    spec.type = LayerType::Dropout;
    if (w.size() != 2 || !parse_number(w[1], spec.p) || !(spec.p >= 0.0 && spec.p < 1.0)) {
      return "expected 'dropout <p>' with 0 <= p < 1";
    }
  } else {
    return "unknown layer type '" + std::string(kind) + "'";
  }
  return {};
}

}  // namespace detail

/// Parses a run description, collecting every error rather than stopping at
/// the first. `input`, `classes` and `layers` are required.
inline ConfigParse try_parse_config(std::string_view text) {
  ConfigParse result;
  RunSpec spec;
  std::map<std::string, std::size_t> seen;  // key -> line
  std::vector<std::pair<std::size_t, std::string>> layer_entries;
  std::optional<std::vector<std::size_t>> group_sizes;
  std::size_t layers_line = 0;

  auto fail = [&](std::size_t line, const std::string& msg) {
    result.errors.push_back("line " + std::to_string(line) + ": " + msg);
  };

  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(line_no, "expected 'key = value'");
      continue;
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      fail(line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
      continue;
    }
    if (value.empty()) {
      fail(line_no, "key '" + key + "' has no value");
      continue;
    }

    auto mismatch = [&](const char* expected) { fail(line_no, "key '" + key + "' expects " + expected); };
    auto count = [&](std::size_t& out, bool positive = true) {
      std::size_t v = 0;
      if (!detail::parse_number(value, v) || (positive && v == 0))
        mismatch(positive ? "a positive integer" : "a non-negative integer");
      else
        out = v;
    };
    auto real = [&](double& out, double lo, double hi, bool hi_open, const char* what) {
      double v = 0.0;
      if (!detail::parse_number(value, v) || !(v >= lo) || (hi_open ? !(v < hi) : !(v <= hi)))
        mismatch(what);
      else
        out = v;
    };
    auto flag = [&](bool& out) {
      if (!detail::parse_bool(value, out)) mismatch("true or false");
    };
    constexpr double inf = std::numeric_limits<double>::infinity();

    if (key == "input") {
      if (!detail::parse_shape(value, spec.network.input_shape)) mismatch("a shape like 2 or 3x24x24");
    } else if (key == "classes") {
      count(spec.network.classes);
    } else if (key == "layers") {
      layers_line = line_no;
      for (auto entry : detail::split(value, '|')) layer_entries.emplace_back(line_no, std::string(entry));
    } else if (key == "group_sizes") {
      std::vector<std::size_t> sizes;
      bool ok = true;
      for (auto part : detail::split(value, '-')) {
        std::size_t g = 0;
        ok = ok && detail::parse_number(part, g) && g > 0;
        sizes.push_back(g);
      }
      if (!ok) mismatch("dash-separated group sizes like 2-2-2-5");
      else group_sizes = std::move(sizes);
    } else if (key == "selector") {
      try {
        spec.network.selector = parse_selector(value);
      } catch (const ConfigError& e) {
        fail(line_no, e.what());
      }
    } else if (key == "dropout_input") {
      real(spec.network.dropout_input, 0.0, 1.0, true, "a probability in [0, 1)");
    } else if (key == "dropout_hidden") {
      real(spec.network.dropout_hidden, 0.0, 1.0, true, "a probability in [0, 1)");
    } else if (key == "learning_rate") {
      real(spec.optimizer.learning_rate, std::numeric_limits<double>::min(), inf, true, "a positive number");
    } else if (key == "momentum") {
      real(spec.optimizer.momentum, 0.0, 1.0, true, "a number in [0, 1)");
    } else if (key == "batch_size") {
      count(spec.optimizer.batch_size);
    } else if (key == "epochs") {
      count(spec.optimizer.epochs, false);
    } else if (key == "flip") {
      flag(spec.augment.flip);
    } else if (key == "flip_probability") {
      real(spec.augment.flip_probability, 0.0, 1.0, false, "a probability in [0, 1]");
    } else if (key == "zca") {
      flag(spec.augment.zca);
    } else if (key == "zca_epsilon") {
      real(spec.augment.zca_epsilon, 0.0, inf, true, "a non-negative number");
    } else if (key == "dataset") {
      if (value == "spirals") spec.data.source = DataSource::Spirals;
      else if (value == "blobs") spec.data.source = DataSource::Blobs;
      else if (value == "csv") spec.data.source = DataSource::Csv;
      else mismatch("one of spirals, blobs, csv");
    } else if (key == "data_path") {
      spec.data.path = std::string(value);
    } else if (key == "test_path") {
      spec.data.test_path = std::string(value);
    } else if (key == "samples_per_class") {
      count(spec.data.samples_per_class);
    } else if (key == "noise") {
      real(spec.data.noise, 0.0, inf, true, "a non-negative number");
    } else if (key == "turns") {
      real(spec.data.turns, std::numeric_limits<double>::min(), inf, true, "a positive number");
    } else if (key == "test_fraction") {
      real(spec.data.test_fraction, 0.0, 1.0, true, "a fraction in [0, 1)");
    } else if (key == "seed") {
      if (!detail::parse_number(value, spec.seed)) mismatch("a non-negative integer");
    } else if (key == "switch_probes") {
      count(spec.switch_probes, false);
    } else if (key == "gradcheck_eps") {
      real(spec.gradcheck_eps, std::numeric_limits<double>::min(), inf, true, "a positive number");
    } else if (key == "gradcheck_samples") {
      count(spec.gradcheck_samples);
    } else if (key == "approx_target") {
      spec.approx.target = std::string(value);
      const auto names = target_names();
      if (std::find(names.begin(), names.end(), spec.approx.target) == names.end())
        mismatch("one of constant, linear, quadratic, sine, step");
    } else if (key == "approx_n") {
      count(spec.approx.n);
    } else if (key == "approx_deltas") {
      std::vector<double> ds;
      bool ok = true;
      for (auto part : detail::split(value, ',')) {
        double d = 0.0;
        ok = ok && detail::parse_number(part, d) && d > 0.0;
        ds.push_back(d);
      }
      if (!ok) mismatch("comma-separated positive pitches");
      else spec.approx.deltas = std::move(ds);
    } else if (key == "approx_radius") {
      real(spec.approx.radius, std::numeric_limits<double>::min(), inf, true, "a positive number");
    } else if (key == "approx_grid") {
      count(spec.approx.grid);
    } else if (key == "approx_symmetric") {
      flag(spec.approx.symmetric);
    } else if (key == "bench_m") {
      count(spec.bench.m);
    } else if (key == "bench_d") {
      count(spec.bench.d);
    } else if (key == "bench_k") {
      count(spec.bench.k);
    } else if (key == "bench_selector") {
      try {
        spec.bench.selector = parse_selector(value);
      } catch (const ConfigError& e) {
        fail(line_no, e.what());
      }
    } else if (key == "bench_trials") {
      count(spec.bench.trials);
    } else {
      fail(line_no, "unknown key '" + key + "'");
    }
  }

  for (const char* required : {"input", "classes", "layers"}) {
    if (!seen.count(required)) result.errors.push_back(std::string("missing required key '") + required + "'");
  }

  std::size_t next_group = 0;
  for (std::size_t i = 0; i < layer_entries.size(); ++i) {
    const auto& [line, entry] = layer_entries[i];
    if (entry == "none" && layer_entries.size() == 1) break;  // no hidden layers
    LayerSpec ls;
    bool needs_group = false;
    const std::string err = detail::parse_layer(entry, ls, needs_group);
    if (!err.empty()) {
      fail(line, "layer " + std::to_string(i) + ": " + err);
      continue;
    }
    if (needs_group) {
      if (!group_sizes || next_group >= group_sizes->size()) {
        fail(line, "layer " + std::to_string(i) + ": no group size given and group_sizes is exhausted");
        continue;
      }
      ls.group = (*group_sizes)[next_group++];
    }
    spec.network.layers.push_back(std::move(ls));
  }
  if (group_sizes && next_group != group_sizes->size() && layers_line) {
    fail(seen.at("group_sizes"), "group_sizes lists " + std::to_string(group_sizes->size()) +
                                     " groups but only " + std::to_string(next_group) + " layers use it");
  }
  if (spec.data.source == DataSource::Csv && spec.data.path.empty() && seen.count("dataset")) {
    fail(seen.at("dataset"), "dataset = csv needs data_path");
  }

  if (result.errors.empty()) result.spec = std::move(spec);
  return result;
}

inline RunSpec parse_config(std::string_view text) {
  auto r = try_parse_config(text);
  if (!r.errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return *r.spec;
}

inline RunSpec load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::string render_layer(const LayerSpec& s) {
  switch (s.type) {
    case LayerType::Dense: return "dense " + std::to_string(s.units);
    case LayerType::Conv:
      return "conv " + std::to_string(s.units) + " k" + std::to_string(s.kernel) + " s" + std::to_string(s.stride);
    case LayerType::Pool: return "pool " + std::to_string(s.window) + " s" + std::to_string(s.stride);
    case LayerType::ChannelOut:
      return "channelout " + std::to_string(s.group) + (s.selector ? " " + to_string(*s.selector) : "");
    case LayerType::Maxout: return "maxout " + std::to_string(s.group);
    case LayerType::Dropout: return "dropout " + format_number(s.p);
  }
  return {};
}

/// Canonical text for a run; parse_config(render_config(s)) == s.
inline std::string render_config(const RunSpec& s) {
  std::ostringstream o;
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::string shape;
  for (std::size_t i = 0; i < s.network.input_shape.size(); ++i)
    shape += (i ? "x" : "") + std::to_string(s.network.input_shape[i]);
  std::string layers;
  for (std::size_t i = 0; i < s.network.layers.size(); ++i)
    layers += (i ? " | " : "") + render_layer(s.network.layers[i]);
  if (layers.empty()) layers = "none";
  std::string deltas;
  for (std::size_t i = 0; i < s.approx.deltas.size(); ++i) deltas += (i ? "," : "") + format_number(s.approx.deltas[i]);

  o << "# network\n"
    << "input = " << shape << "\n"
    << "classes = " << s.network.classes << "\n"
    << "layers = " << layers << "\n"
    << "selector = " << to_string(s.network.selector) << "\n"
    << "dropout_input = " << format_number(s.network.dropout_input) << "\n"
    << "dropout_hidden = " << format_number(s.network.dropout_hidden) << "\n"
    << "\n# optimizer\n"
    << "learning_rate = " << format_number(s.optimizer.learning_rate) << "\n"
    << "momentum = " << format_number(s.optimizer.momentum) << "\n"
    << "batch_size = " << s.optimizer.batch_size << "\n"
    << "epochs = " << s.optimizer.epochs << "\n"
    << "\n# preprocessing\n"
    << "flip = " << b(s.augment.flip) << "\n"
    << "flip_probability = " << format_number(s.augment.flip_probability) << "\n"
    << "zca = " << b(s.augment.zca) << "\n"
    << "zca_epsilon = " << format_number(s.augment.zca_epsilon) << "\n"
    << "\n# data\n"
    << "dataset = " << data_source_name(s.data.source) << "\n";
  if (!s.data.path.empty()) o << "data_path = " << s.data.path << "\n";
  if (!s.data.test_path.empty()) o << "test_path = " << s.data.test_path << "\n";
  o << "samples_per_class = " << s.data.samples_per_class << "\n"
    << "noise = " << format_number(s.data.noise) << "\n"
    << "turns = " << format_number(s.data.turns) << "\n"
    << "test_fraction = " << format_number(s.data.test_fraction) << "\n"
    << "seed = " << s.seed << "\n"
    << "\n# diagnostics\n"
    << "switch_probes = " << s.switch_probes << "\n"
    << "gradcheck_eps = " << format_number(s.gradcheck_eps) << "\n"
    << "gradcheck_samples = " << s.gradcheck_samples << "\n"
    << "approx_target = " << s.approx.target << "\n"
    << "approx_n = " << s.approx.n << "\n"
    << "approx_deltas = " << deltas << "\n"
    << "approx_radius = " << format_number(s.approx.radius) << "\n"
    << "approx_grid = " << s.approx.grid << "\n"
    << "approx_symmetric = " << b(s.approx.symmetric) << "\n"
    << "bench_m = " << s.bench.m << "\n"
    << "bench_d = " << s.bench.d << "\n"
    << "bench_k = " << s.bench.k << "\n"
    << "bench_selector = " << to_string(s.bench.selector) << "\n"
    << "bench_trials = " << s.bench.trials << "\n";
  return o.str();
}

}  // namespace chanout
