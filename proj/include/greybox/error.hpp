#pragma once

#include <stdexcept>
#include <string>

namespace greybox {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model specification or inconsistent names.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown: non-PD covariance, integrator failure, overflow.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace greybox
