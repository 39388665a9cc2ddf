#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace imuot {

// Invalid arguments to a pure function (shape mismatch, empty input, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (degenerate arena, bad hyper-parameters).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing or malformed data on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or solver failure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged. Carries the per-epoch history collected so far.
class TrainingError : public NumericalError {
 public:
  TrainingError(const std::string& what, std::vector<double> history)
      : NumericalError(what), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

}  // namespace imuot
