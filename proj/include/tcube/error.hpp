#pragma once

#include <stdexcept>
#include <string>

namespace tcube {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, violated preconditions, unknown flags or keys.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A filter or selection produced nothing.
class EmptyResultError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failure while executing a valid request (I/O, numerical breakdown, exhausted retries).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

// Stored data does not match what its manifest or marker promises.
class IntegrityError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace tcube
