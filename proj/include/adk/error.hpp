#pragma once

#include <stdexcept>
#include <string>

namespace adk {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents are incompatible with the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A size-dependent precondition failed (padding wider than the input, image smaller than a window).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The API was called in an invalid order or with an invalid argument.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A persisted file is malformed, truncated or of an unknown version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion problem; the message names the offending file(s).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace adk
