#pragma once

#include <stdexcept>
#include <string>

namespace stbq {

enum class ErrorCode {
    InvalidArgument,
    MissingFile,
    SchemaViolation,
    ShapeMismatch,
    SizeMismatch,
    NonFiniteValue,
    DegenerateAxis,
    AllZeroModel,
    InfeasibleBudget,
    DegenerateHessian,
    NotPositiveDefinite,
    NoFeasibleCandidate,
    OverflowingIndex,
    BadMagic,
    UnsupportedVersion,
    TruncatedStream,
};

const char * error_code_name(ErrorCode code);

// True for failures of the numerics (exit code 3 in the CLI); everything else
// is input/format validation (exit code 2).
bool is_numerical_error(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string & msg)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

inline const char * error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:     return "InvalidArgument";
        case ErrorCode::MissingFile:         return "MissingFile";
        case ErrorCode::SchemaViolation:     return "SchemaViolation";
        case ErrorCode::ShapeMismatch:       return "ShapeMismatch";
        case ErrorCode::SizeMismatch:        return "SizeMismatch";
        case ErrorCode::NonFiniteValue:      return "NonFiniteValue";
        case ErrorCode::DegenerateAxis:      return "DegenerateAxis";
        case ErrorCode::AllZeroModel:        return "AllZeroModel";
        case ErrorCode::InfeasibleBudget:    return "InfeasibleBudget";
        case ErrorCode::DegenerateHessian:   return "DegenerateHessian";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::NoFeasibleCandidate: return "NoFeasibleCandidate";
        case ErrorCode::OverflowingIndex:    return "OverflowingIndex";
        case ErrorCode::BadMagic:            return "BadMagic";
        case ErrorCode::UnsupportedVersion:  return "UnsupportedVersion";
        case ErrorCode::TruncatedStream:     return "TruncatedStream";
    }
    return "UnknownError";
}

inline bool is_numerical_error(ErrorCode code) {
    switch (code) {
        case ErrorCode::DegenerateAxis:
        case ErrorCode::AllZeroModel:
        case ErrorCode::DegenerateHessian:
        case ErrorCode::NotPositiveDefinite:
        case ErrorCode::NoFeasibleCandidate:
            return true;
        default:
            return false;
    }
}

}  // namespace stbq
