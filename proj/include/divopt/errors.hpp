#pragma once

#include <stdexcept>
#include <string>

namespace divopt {

// Invalid hyperparameters, class splits, or experiment files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shape mismatch between tensors, models, and data.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: stale caches, empty batches.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Labels or records inconsistent with their declared domain.
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace divopt
