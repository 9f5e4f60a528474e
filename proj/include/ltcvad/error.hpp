#pragma once

#include <stdexcept>
#include <string>

namespace ltcvad {

/// Base class for every error raised by the library. Messages are short,
/// lowercase phrases ("bad magic", "truncated") so callers and tests can
/// match on them.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ltcvad
