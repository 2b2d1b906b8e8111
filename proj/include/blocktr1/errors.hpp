#pragma once

#include <stdexcept>
#include <string>

namespace blocktr1 {

/// Inconsistent vector/matrix sizes passed across an API boundary.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or problem definition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf, singular systems, divergence and similar numerical breakdowns.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dim(long actual, long expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected dimension " +
                         std::to_string(expected) + ", got " + std::to_string(actual));
  }
}

}  // namespace blocktr1
