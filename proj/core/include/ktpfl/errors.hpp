#pragma once

#include <stdexcept>
#include <string>

namespace ktpfl {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/model shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its legal range (e.g. temperature <= 0).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Data contents violate a contract (labels out of range, rows not stochastic).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is not in the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An experiment configuration is invalid or infeasible.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A federation round violated the exchange protocol (missing prediction,
/// misaligned teacher, failed client).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Arithmetic produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ktpfl
