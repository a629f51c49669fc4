#pragma once

#include <stdexcept>
#include <string>

namespace beamsim {

// Argument or shape violations detected at a public entry point.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered where a finite value is required.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zero channel, zero decoder output, user placed on an array element.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation called out of order (backward before forward, inference before training).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class FramingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad config file, unknown preset, or missing artifact on disk.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace beamsim
