#pragma once

#include <stdexcept>
#include <string>

namespace ong {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up (matmul, elementwise, masks vs weights).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition (negative NMF input, bad config value).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Config file or command-line settings that cannot be turned into a run.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated files: checkpoints, IDX, CSV.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A masked weight was observed non-zero. Always a bug, never recoverable.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace ong
