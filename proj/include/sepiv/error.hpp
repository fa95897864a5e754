#pragma once

#include <stdexcept>
#include <string>

namespace sepiv {

enum class ErrorCode {
  // input / configuration problems (CLI exit 2)
  EmptyArm,
  NonBinary,
  DegenerateOutcome,
  ParseError,
  ConfigError,
  InvalidArgument,
  EmptyCell,
  InsufficientData,
  // numerical failures (CLI exit 3)
  NoConvergence,
  WeakInstrument,
  NegativePsi,
  SingularSystem,
  DivisionGuard,
  NormalizationFailure,
  RankDeficient,
  EmptyInterval,
};

const char* error_name(ErrorCode code);

// True for errors caused by bad input rather than a numerical breakdown.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace sepiv
