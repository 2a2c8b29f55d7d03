#pragma once

#include <stdexcept>
#include <string>

namespace samcp {

/// Malformed or inconsistent data: corrupt files, unknown versions, bad masks.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf surfaced in a computation that must stay finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or command usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace samcp
