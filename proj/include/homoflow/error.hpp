#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace homoflow {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  NonFiniteGradient,
  NonFiniteHessian,
  AmbiguousDegree,
  UnknownLossKind,
  ConvergedToZero,
  MaxStepsExceeded,
  EigenFailure,
  StepSizeUnderflow,
  NonFiniteState,
  NonPositiveNCF,
  NeverEscaped,
  PoorFit,
  NoSaddleFound,
  IndexOutOfRange,
  ZeroLeak,
  DegenerateLayer,
  CheckpointMissing,
  DomainError,
  NoSuchDirection,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteHessian: return "NonFiniteHessian";
    case ErrorCode::AmbiguousDegree: return "AmbiguousDegree";
    case ErrorCode::UnknownLossKind: return "UnknownLossKind";
    case ErrorCode::ConvergedToZero: return "ConvergedToZero";
    case ErrorCode::MaxStepsExceeded: return "MaxStepsExceeded";
    case ErrorCode::EigenFailure: return "EigenFailure";
    case ErrorCode::StepSizeUnderflow: return "StepSizeUnderflow";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonPositiveNCF: return "NonPositiveNCF";
    case ErrorCode::NeverEscaped: return "NeverEscaped";
    case ErrorCode::PoorFit: return "PoorFit";
    case ErrorCode::NoSaddleFound: return "NoSaddleFound";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ZeroLeak: return "ZeroLeak";
    case ErrorCode::DegenerateLayer: return "DegenerateLayer";
    case ErrorCode::CheckpointMissing: return "CheckpointMissing";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NoSuchDirection: return "NoSuchDirection";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace homoflow
