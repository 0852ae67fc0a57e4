#pragma once

#include <stdexcept>
#include <string>

namespace more {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or schema-inconsistent input data (CSV, schema JSON, instances).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, gradient or trace value during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A predicate was fixed whose support in the training data is empty.
class EmptySupportError : public Error {
 public:
  using Error::Error;
};

/// The refinement backend could not be reached (transport, timeout, auth).
class RefinementUnavailable : public Error {
 public:
  using Error::Error;
};

/// Configuration file could not be read or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace more
