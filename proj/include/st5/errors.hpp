#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace st5 {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar argument (temperature <= 0, step out of range, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input that would require dividing by ~0 (zero vector, empty mask, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition that is not a plain shape problem.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or supplied where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

// Work that would not fit in host memory.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { NotACheckpoint, VersionMismatch, Truncated, ShapeMismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace st5
