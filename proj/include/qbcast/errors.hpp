#pragma once

#include <stdexcept>
#include <string>

namespace qbcast {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: out-of-range physical parameters, malformed scenarios,
/// unregistered variables.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::string path = {})
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A polynomial operation would exceed the configured degree cap.
class DegreeCapError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: tolerance not met, truncation too small, singular solve.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Fock-basis truncation is too small for the requested operation.
class TruncationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace qbcast
