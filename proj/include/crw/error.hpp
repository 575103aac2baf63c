#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crw {

/// Every failure the workbench reports maps onto one of these codes. The CLI
/// and the HTTP layer translate codes into exit statuses and response codes.
enum class ErrorCode {
  // timeline-model
  MalformedJson,
  MissingRequiredField,
  EmptyPast,
  // pomdp-splitter
  TooFewEvents,
  MissingDischargeTime,
  EmptyPastAfterStrip,
  // oracle-gateway
  SchemaViolation,
  SourceNotInFuture,
  EndpointUnavailable,
  AxisCoverageMissing,
  FutureLeakDetected,
  // rubric-reward
  NoPositiveCriteria,
  VerdictKeyMismatch,
  UnsupportedFamily,
  // eval-harness
  EmptyRecordSet,
  KeyMismatch,
  // merge-lab
  ShapeMismatch,
  NameSetMismatch,
  InvalidBand,
  InvalidDensity,
  MissingActivationTensor,
  UnsupportedDtype,
  MalformedArchive,
  // alignment-stats
  EmptyInput,
  LengthMismatch,
  RaggedMatrix,
  InsufficientPairs,
  ConstantSeries,
  NoDyads,
  NoDecisive,
  DisconnectedGraph,
  // annotation-service
  FinalizedRecordExists,
  GuardFailed,
  NoDraft,
  Unauthorized,
  NotFound,
  // cli / plumbing
  UnknownSubcommand,
  ConfigError,
  IoError,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::MissingRequiredField: return "MissingRequiredField";
    case ErrorCode::EmptyPast: return "EmptyPast";
    case ErrorCode::TooFewEvents: return "TooFewEvents";
    case ErrorCode::MissingDischargeTime: return "MissingDischargeTime";
    case ErrorCode::EmptyPastAfterStrip: return "EmptyPastAfterStrip";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::SourceNotInFuture: return "SourceNotInFuture";
    case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
    case ErrorCode::AxisCoverageMissing: return "AxisCoverageMissing";
    case ErrorCode::FutureLeakDetected: return "FutureLeakDetected";
    case ErrorCode::NoPositiveCriteria: return "NoPositiveCriteria";
    case ErrorCode::VerdictKeyMismatch: return "VerdictKeyMismatch";
    case ErrorCode::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorCode::EmptyRecordSet: return "EmptyRecordSet";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NameSetMismatch: return "NameSetMismatch";
    case ErrorCode::InvalidBand: return "InvalidBand";
    case ErrorCode::InvalidDensity: return "InvalidDensity";
    case ErrorCode::MissingActivationTensor: return "MissingActivationTensor";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::MalformedArchive: return "MalformedArchive";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RaggedMatrix: return "RaggedMatrix";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::ConstantSeries: return "ConstantSeries";
    case ErrorCode::NoDyads: return "NoDyads";
    case ErrorCode::NoDecisive: return "NoDecisive";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::FinalizedRecordExists: return "FinalizedRecordExists";
    case ErrorCode::GuardFailed: return "GuardFailed";
    case ErrorCode::NoDraft: return "NoDraft";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) +
                           (detail.empty() ? "" : ": " + detail)),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail = {}) {
  throw Error(code, detail);
}

}  // namespace crw
