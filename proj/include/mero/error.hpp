#pragma once

#include <stdexcept>
#include <string>

namespace mero {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file or on-disk layout; message carries the offending path.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Stale revision on an optimistic-concurrency write.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace mero

#define MERO_CHECK(cond, msg)                   \
  do {                                          \
    if (!(cond)) throw ::mero::ValidationError(msg); \
  } while (0)
