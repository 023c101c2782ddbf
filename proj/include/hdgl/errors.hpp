#pragma once

#include <stdexcept>
#include <string>

namespace hdgl {

enum class ErrorCode {
  Format,
  Parse,
  InvalidInput,
  Schema,
  Uniqueness,
  Stratification,
  InvalidWindow,
  TooShortSeries,
  Shape,
  Index,
  EmptyGraph,
  EmptySequence,
  DegenerateSigma,
  InvalidParameter,
  Config,
  InvalidMask,
  AucUndefined,
  Io,
  Checkpoint,
  Usage,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a code so callers (and the
/// CLI) can tell validation problems apart without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace hdgl
