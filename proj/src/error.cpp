#include "sepiv/error.hpp"

namespace sepiv {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyArm: return "EmptyArm";
    case ErrorCode::NonBinary: return "NonBinary";
    case ErrorCode::DegenerateOutcome: return "DegenerateOutcome";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyCell: return "EmptyCell";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::WeakInstrument: return "WeakInstrument";
    case ErrorCode::NegativePsi: return "NegativePsi";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DivisionGuard: return "DivisionGuard";
    case ErrorCode::NormalizationFailure: return "NormalizationFailure";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::EmptyInterval: return "EmptyInterval";
  }
  return "Unknown";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyArm:
    case ErrorCode::NonBinary:
    case ErrorCode::DegenerateOutcome:
    case ErrorCode::ParseError:
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::EmptyCell:
    case ErrorCode::InsufficientData:
      return true;
    default:
      return false;
  }
}

}  // namespace sepiv
