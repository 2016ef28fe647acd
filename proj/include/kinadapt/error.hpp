#pragma once

#include <stdexcept>
#include <string>

namespace kinadapt {

// Root of the library's exception hierarchy. The CLI maps the three
// subclasses onto its exit-code taxonomy (2 config, 3 data, 4 numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not satisfy an operation's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failed numerical procedures.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace kinadapt
