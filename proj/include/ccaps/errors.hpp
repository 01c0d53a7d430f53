#pragma once

#include <stdexcept>
#include <string>

namespace ccaps {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numerically unusable state (training health).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A capsule received zero total attention.
class DegenerateCapsuleError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), detail_(what), line_(line) {}
  std::size_t line() const { return line_; }
  /// The message without the line suffix.
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccaps
