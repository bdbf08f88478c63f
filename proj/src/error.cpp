#include "teleop/error.hpp"

namespace teleop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kOutOfLimits: return "OutOfLimits";
    case ErrorCode::kInvalidModel: return "InvalidModel";
    case ErrorCode::kTooFewPairs: return "TooFewPairs";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kOversizeFrame: return "OversizeFrame";
    case ErrorCode::kMalformedJson: return "MalformedJson";
    case ErrorCode::kUnknownType: return "UnknownType";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kHandshakeTimeout: return "HandshakeTimeout";
    case ErrorCode::kProtocolViolation: return "ProtocolViolation";
    case ErrorCode::kBusy: return "Busy";
    case ErrorCode::kStaleValidation: return "StaleValidation";
    case ErrorCode::kNotEngaged: return "NotEngaged";
    case ErrorCode::kUnreachable: return "Unreachable";
    case ErrorCode::kDepthLimit: return "DepthLimit";
    case ErrorCode::kDegenerateDirection: return "DegenerateDirection";
    case ErrorCode::kWrongMode: return "WrongMode";
    case ErrorCode::kIkFailure: return "IkFailure";
    case ErrorCode::kPlaneViolation: return "PlaneViolation";
    case ErrorCode::kBoxViolation: return "BoxViolation";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kEmptySeries: return "EmptySeries";
    case ErrorCode::kMissingMarker: return "MissingMarker";
    case ErrorCode::kUnknownTask: return "UnknownTask";
    case ErrorCode::kScriptViolation: return "ScriptViolation";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kBindFailure: return "BindFailure";
  }
  return "Unknown";
}

}  // namespace teleop
