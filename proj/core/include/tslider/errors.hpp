#pragma once

#include <stdexcept>
#include <string>

namespace tslider {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad field values, mismatched encoders or adapters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A serialized file is malformed, truncated or of the wrong kind.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Positive and negative prompts produce the same embedding.
class DegenerateDirectionError : public ContractError {
 public:
  using ContractError::ContractError;
};

}  // namespace tslider
