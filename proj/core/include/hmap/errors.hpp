#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hmap {

/// Broad failure classes. The CLI maps each one to an exit code.
enum class ErrorKind {
  usage,     // bad flags, bad config values, malformed pattern strings
  data,      // file IO, archive/checkpoint decoding, incompatible checkpoints
  numeric,   // non-finite values, degenerate masks, too many skipped steps
  contract,  // programmer errors: shape mismatch, misuse of an API
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

/// An attention row with no allowed key.
class DegenerateMaskError : public Error {
 public:
  DegenerateMaskError(const std::string& what, std::size_t row)
      : Error(ErrorKind::numeric, what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Non-finite intermediate. `step` is the sequence position (or optimizer step) where it appeared.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : Error(ErrorKind::numeric, what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Image dimensions are not divisible by the patch dimensions.
class TilingError : public Error {
 public:
  explicit TilingError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Config file problem; line is 1-based, 0 when not tied to a line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line)
      : Error(ErrorKind::usage, line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// A checkpoint whose architecture does not match the requested config.
class IncompatibleCheckpointError : public Error {
 public:
  IncompatibleCheckpointError(const std::string& field, const std::string& what)
      : Error(ErrorKind::data, "incompatible checkpoint field '" + field + "': " + what),
        field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace hmap
