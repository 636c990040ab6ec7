#pragma once

#include <stdexcept>
#include <string>

namespace pflab {

// Root of every exception thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (e.g. t outside
// the schedule interval).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition (length mismatch, unsupported order, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Overflow, NaN, non-finite gradient or step-size underflow.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized document; the message carries the location.
class ParseError : public Error {
 public:
  using Error::Error;
};

class UnknownSolverError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace pflab
