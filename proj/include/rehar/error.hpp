#pragma once

#include <stdexcept>
#include <string>

namespace rehar {

// Base of every error raised by the library. The category decides the CLI
// exit code: config/usage = 1, data = 2, numeric = 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rehar
