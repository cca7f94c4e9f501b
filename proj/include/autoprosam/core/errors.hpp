#pragma once

#include <stdexcept>
#include <string>

namespace aps {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or grid shapes violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration (unknown key, invalid value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or inconsistent data on disk, or unusable dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aps
