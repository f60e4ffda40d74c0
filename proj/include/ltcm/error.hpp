#pragma once

#include <stdexcept>
#include <string>

namespace ltcm {

// Error taxonomy. The CLI maps these onto exit codes (config 1, data 2,
// numeric 3).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct InputError : DataError {
  using DataError::DataError;
};

struct CheckpointError : ConfigError {
  using ConfigError::ConfigError;
};

struct DimensionError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct MetricError : Error {
  using Error::Error;
};

/// Raised when an optimiser update sees a non-finite gradient.
struct TrainingError : NumericError {
  TrainingError(const std::string& param, const std::string& what)
      : NumericError(what + " (parameter '" + param + "')"), parameter(param) {}
  std::string parameter;
};

}  // namespace ltcm
