#pragma once

#include <stdexcept>
#include <string>

namespace fluencygan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
struct DimensionError : Error {
  using Error::Error;
};

/// Out-of-range hyperparameter (e.g. non-positive temperature).
struct ParameterError : Error {
  using Error::Error;
};

/// Violated precondition of an operation.
struct ContractError : Error {
  using Error::Error;
};

/// Unreadable or malformed corpus/vocabulary/pair files.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite loss during training.
struct NumericError : Error {
  using Error::Error;
};

/// Bad checkpoint magic, version, or truncated payload.
struct FormatError : Error {
  using Error::Error;
};

/// Bad run configuration or command-line usage.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace fluencygan
