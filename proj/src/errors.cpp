#include "hdgl/errors.hpp"

namespace hdgl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Format: return "format error";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::InvalidInput: return "invalid input";
    case ErrorCode::Schema: return "schema error";
    case ErrorCode::Uniqueness: return "uniqueness error";
    case ErrorCode::Stratification: return "stratification error";
    case ErrorCode::InvalidWindow: return "invalid window";
    case ErrorCode::TooShortSeries: return "too-short series";
    case ErrorCode::Shape: return "shape error";
    case ErrorCode::Index: return "index error";
    case ErrorCode::EmptyGraph: return "empty graph";
    case ErrorCode::EmptySequence: return "empty sequence";
    case ErrorCode::DegenerateSigma: return "degenerate sigma";
    case ErrorCode::InvalidParameter: return "invalid parameter";
    case ErrorCode::Config: return "config error";
    case ErrorCode::InvalidMask: return "invalid mask";
    case ErrorCode::AucUndefined: return "AUC undefined";
    case ErrorCode::Io: return "I/O error";
    case ErrorCode::Checkpoint: return "checkpoint incompatibility";
    case ErrorCode::Usage: return "usage error";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace hdgl
