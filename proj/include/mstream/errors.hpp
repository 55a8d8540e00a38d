#pragma once

#include <stdexcept>
#include <string>

namespace mstream {

// Base of every error thrown by the library. The CLI maps the concrete type
// to an exit code (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Object used in a state it does not support (e.g. unfitted normalizer).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf, singular systems, non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given input (e.g. a single class present).
class MetricError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

class StratificationError : public DataError {
 public:
  using DataError::DataError;
};

/// A repeat of the evaluation protocol failed; carries the repeat index.
class RepeatError : public Error {
 public:
  RepeatError(int repeat, const std::string& what)
      : Error("repeat " + std::to_string(repeat) + ": " + what), repeat_(repeat) {}
  int repeat() const noexcept { return repeat_; }

 private:
  int repeat_;
};

}  // namespace mstream
