#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace teleop {

enum class ErrorCode {
  // kinematics
  kNonFinite,
  kNotConverged,
  kOutOfLimits,
  kInvalidModel,
  // calibration
  kTooFewPairs,
  kDegenerateGeometry,
  // protocol
  kOversizeFrame,
  kMalformedJson,
  kUnknownType,
  kMissingField,
  kHandshakeTimeout,
  kProtocolViolation,
  // session
  kBusy,
  kStaleValidation,
  kNotEngaged,
  kUnreachable,
  kDepthLimit,
  kDegenerateDirection,
  kWrongMode,
  kIkFailure,
  // robot_sim
  kPlaneViolation,
  kBoxViolation,
  kTimeout,
  // metrics
  kEmptySeries,
  kMissingMarker,
  // cli
  kUnknownTask,
  kScriptViolation,
  kBadConfig,
  kBindFailure,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace teleop
