#pragma once

#include <stdexcept>
#include <string>

namespace umrl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch; the message names the offending segment or field.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf showed up where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Failure while training or rolling out (carries a diagnostic message).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace umrl
