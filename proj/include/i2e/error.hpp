#pragma once

#include <stdexcept>
#include <string>

namespace i2e {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file or payload (missing column, bad header, truncated file).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Tensor or matrix shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid input data (non-positive open, single-class labels, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Transient upstream failure; the caller may retry.
class RetryableError : public Error {
 public:
  using Error::Error;
};

/// The upstream source does not know the symbol; the caller drops it.
class UnavailableError : public Error {
 public:
  using Error::Error;
};

/// Stored content does not match its recorded digest.
class DigestError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace i2e
