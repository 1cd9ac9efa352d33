#pragma once

#include <stdexcept>
#include <string>

namespace dmlganr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or layer dimensions do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input record (CSV row, binary feature record).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A required forward cache or model state is missing.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Wrong magic, unsupported version or truncated binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or out-of-range input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value or diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmlganr
