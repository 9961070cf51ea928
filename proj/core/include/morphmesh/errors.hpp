#pragma once

#include <stdexcept>
#include <string>

namespace morphmesh {

// Every failure raised by the library carries one of these codes. The CLI maps
// kConfig to exit status 2 and everything else to 1.
enum class ErrorCode {
  kNonUnitQuaternion,
  kInitFitFailure,
  kSingularActuation,
  kSingularMatrix,
  kNoFullRankPattern,
  kParseError,
  kEvalError,
  kUnknownShape,
  kAntipodalNormal,
  kMaxIterations,
  kIntegratorStepFailure,
  kConfig,
  kInvalidArgument,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Expression parse failure; offset is the byte position in the source text.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& message)
      : Error(ErrorCode::kParseError,
              "parse error at offset " + std::to_string(offset) + ": " + message),
        offset_(offset),
        message_(message) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::size_t offset_;
  std::string message_;
};

}  // namespace morphmesh
