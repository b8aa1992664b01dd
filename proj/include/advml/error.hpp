#pragma once

#include <stdexcept>
#include <string>

namespace advml {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument violates an operation's precondition (ranges, counts, labels).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a computation tape (backward twice, foreign variables, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (image headers, containers, CSV, JSON config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures: missing files, unwritable directories.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace advml
