#pragma once

#include <stdexcept>
#include <string>

namespace stuckfdir {

/// Invalid arguments, configuration, or flags. Maps to CLI exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing, or inconsistent data. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training could not proceed or diverged. Maps to CLI exit code 3.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stuckfdir
