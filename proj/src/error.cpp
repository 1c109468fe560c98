#include "hydronet/error.hpp"

namespace hydronet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::DisconnectedComponent: return "DisconnectedComponent";
    case ErrorCode::OutletHasOutflow: return "OutletHasOutflow";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::InvalidEdge: return "InvalidEdge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EmptyTape: return "EmptyTape";
    case ErrorCode::MissingNodeColumn: return "MissingNodeColumn";
    case ErrorCode::NonUniformStride: return "NonUniformStride";
    case ErrorCode::NaNValue: return "NaNValue";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LagTooLarge: return "LagTooLarge";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::FlowExceedsCapacity: return "FlowExceedsCapacity";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::AllExcluded: return "AllExcluded";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::ZeroResidualVariance: return "ZeroResidualVariance";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::TooShort:
    case ErrorCode::LagTooLarge:
    case ErrorCode::InsufficientHistory:
      return ErrorCategory::Config;
    case ErrorCode::NonConvergence:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::FlowExceedsCapacity:
    case ErrorCode::ZeroResidualVariance:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace hydronet
