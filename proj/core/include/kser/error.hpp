#pragma once

#include <stdexcept>
#include <string>

namespace kser {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or arguments (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, I/O failures, shape mismatches on data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss (exit code 3).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace kser
