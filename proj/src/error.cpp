#include "nco/core/error.hpp"

namespace nco {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::HeadDivisibility: return "HeadDivisibility";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DetachedLoss: return "DetachedLoss";
    case ErrorCode::UnknownEnv: return "UnknownEnv";
    case ErrorCode::UnsupportedSize: return "UnsupportedSize";
    case ErrorCode::InfeasibleAction: return "InfeasibleAction";
    case ErrorCode::StepOnDone: return "StepOnDone";
    case ErrorCode::InfeasibleSolution: return "InfeasibleSolution";
    case ErrorCode::UnsupportedEdgeWeightType: return "UnsupportedEdgeWeightType";
    case ErrorCode::MalformedSection: return "MalformedSection";
    case ErrorCode::GroupSizeMismatch: return "GroupSizeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SchemeUnsupported: return "SchemeUnsupported";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::ShapeMismatchOnLoad: return "ShapeMismatchOnLoad";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::MissingRequired: return "MissingRequired";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::OutOfMemory: return "OutOfMemory";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace nco
