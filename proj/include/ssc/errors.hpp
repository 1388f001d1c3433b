#pragma once

#include <stdexcept>
#include <string>

namespace ssc {

// Bad caller-supplied argument (shape mismatch, out-of-range option).
using ArgumentError = std::invalid_argument;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the trainer when a loss component stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssc
