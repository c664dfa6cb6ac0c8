#pragma once

#include <stdexcept>
#include <string>

namespace dualformer {

// Root of every error raised by the library. The CLI maps the subclasses
// onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of an operation (bad index, malformed argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor extents.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Dataset that cannot serve the requested run (wrong channel count, too
// few rows for a window).
class DataError : public Error {
 public:
  using Error::Error;
};

// Spectrum has no energy outside DC, so no basis frequency exists.
class NoDominantFrequency : public Error {
 public:
  using Error::Error;
};

// Signal with zero total energy.
class DegenerateSignal : public Error {
 public:
  using Error::Error;
};

// Optimisation diverged or received a non-finite gradient.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace dualformer
