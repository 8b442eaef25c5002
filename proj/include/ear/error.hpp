#pragma once

#include <stdexcept>
#include <string>

namespace ear {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content (PNG, EARATTN1, EARCKPT1, CSV, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shape or dimension contract violated.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain (negative sigma, zero scale, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// No usable edge-response pixels were found for the r10 statistic.
class NoSignalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ear
