#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deudf {

enum class ErrorCode {
  EmptyInput,
  DegenerateBounds,
  KTooLarge,
  TooFewPoints,
  BadDims,
  NonFiniteLoss,
  MissingNormals,
  EmptyLevelSet,
  EmptyMesh,
  ZeroArea,
  ParseError,
  MixedArity,
  IoError,
  Validation,
};

const char* to_string(ErrorCode code) noexcept;

/// Process exit code for a failure category: 2 validation, 3 numeric, 4 I/O.
int exit_code_for(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the point/mesh readers; carries the 1-based offending line.
class ParseError : public Error {
 public:
  ParseError(ErrorCode code, std::size_t line, const std::string& message);

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace deudf
