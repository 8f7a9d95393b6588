#pragma once

#include <stdexcept>
#include <string>

namespace breakiv {

// Error taxonomy. Validation errors mean the inputs violate a precondition
// and are reported before any numeric work; numeric errors mean a
// computation degenerated (singular design, indefinite covariance, ...).
enum class ErrorCode {
  MissingColumn,
  NonNumericCell,
  DimensionMismatch,
  TooFewRows,
  SegmentTooShort,
  EmptyInput,
  BandwidthTooLarge,
  InvalidConfig,
  SingularDesign,
  SingularWeighting,
  NotPsd,
  NotPd,
};

inline bool is_validation_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::SingularDesign:
    case ErrorCode::SingularWeighting:
    case ErrorCode::NotPsd:
    case ErrorCode::NotPd:
      return false;
    default:
      return true;
  }
}

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::SegmentTooShort: return "SegmentTooShort";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BandwidthTooLarge: return "BandwidthTooLarge";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::SingularWeighting: return "SingularWeighting";
    case ErrorCode::NotPsd: return "NotPsd";
    case ErrorCode::NotPd: return "NotPd";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace breakiv
