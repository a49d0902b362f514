#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace layerscope {

enum class ErrorCode {
  Syntax,
  UnknownKind,
  DanglingReference,
  Cycle,
  Validation,
  UnknownBuiltin,
  JumpMismatch,
  ShapeMismatch,
  DimensionMismatch,
  Io,
  BadMagic,
  VersionMismatch,
  Truncated,
  InvalidArgument,
  NotEnoughSamples,
  NonFinite,
  Divergence,
  RunMismatch,
  AlreadyExists,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Architecture text error carrying a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(ErrorCode code, std::size_t line, std::size_t column, const std::string& message)
      : Error(code, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                        message),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace layerscope
