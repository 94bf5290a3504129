#pragma once

#include <stdexcept>
#include <string>

namespace chanout {

// Tensor extents that do not fit the operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, selector settings, or network layout.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: NaN activations, out-of-range labels, malformed files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken internal contract, e.g. a trace replayed against the wrong tensor.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace chanout
