#pragma once

#include <stdexcept>
#include <string>

namespace lvreg {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, schema violations, precondition failures on
/// user-supplied data. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace lvreg
