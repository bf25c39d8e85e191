#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nco {

enum class ErrorCode {
  ShapeMismatch,
  HeadDivisibility,
  AllMasked,
  NonPositiveTemperature,
  NotScalar,
  DetachedLoss,
  UnknownEnv,
  UnsupportedSize,
  InfeasibleAction,
  StepOnDone,
  InfeasibleSolution,
  UnsupportedEdgeWeightType,
  MalformedSection,
  GroupSizeMismatch,
  NonFiniteLoss,
  SchemeUnsupported,
  ZeroReference,
  TooLarge,
  MagicMismatch,
  ShapeMismatchOnLoad,
  UnknownKey,
  TypeError,
  MissingRequired,
  InvalidConfig,
  OutOfMemory,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-checkable code; the
// message is the one-line diagnostic shown by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace nco
