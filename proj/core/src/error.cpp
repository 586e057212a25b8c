#include "deudf/error.hpp"

namespace deudf {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DegenerateBounds: return "DegenerateBounds";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::BadDims: return "BadDims";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingNormals: return "MissingNormals";
    case ErrorCode::EmptyLevelSet: return "EmptyLevelSet";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::ZeroArea: return "ZeroArea";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MixedArity: return "MixedArity";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::Validation: return "Validation";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::EmptyLevelSet:
    case ErrorCode::ZeroArea:
      return 3;
    case ErrorCode::IoError:
      return 4;
    default:
      return 2;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

ParseError::ParseError(ErrorCode code, std::size_t line, const std::string& message)
    : Error(code, "line " + std::to_string(line) + ": " + message), line_(line) {}

}  // namespace deudf
