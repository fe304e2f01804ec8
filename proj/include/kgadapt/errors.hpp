#pragma once

#include <stdexcept>
#include <string>

namespace kgadapt {

/// Base of every error thrown by the library. The CLI maps the concrete
/// subclass onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape mismatch inside an operation; the message names the op and shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or input data (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files (exit code 1).
class DataError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A stage was asked to run before the stage it depends on (exit code 1).
class PrerequisiteError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Non-finite loss or values (exit code 2).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A frozen parameter group changed, or a stage ran without its prerequisite
/// being honoured (exit code 3).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace kgadapt
