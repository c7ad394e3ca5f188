#pragma once

#include <stdexcept>
#include <string>

namespace shiftnas {

// Base class for every failure the library reports. `kind()` is a stable
// machine-readable tag used by the CLI's error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape_mismatch", what) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error("invalid_argument", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("parse_error", "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct CheckpointError : Error {
  CheckpointError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("non_finite", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace shiftnas
