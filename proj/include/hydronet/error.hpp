#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hydronet {

enum class ErrorCode {
  // graph
  DuplicateNode,
  DanglingEdge,
  CycleDetected,
  DisconnectedComponent,
  OutletHasOutflow,
  UnknownNode,
  InvalidEdge,
  // tensors
  ShapeMismatch,
  WindowTooShort,
  IndexOutOfRange,
  NotScalar,
  EmptyTape,
  // data
  MissingNodeColumn,
  NonUniformStride,
  NaNValue,
  EmptyFile,
  MalformedFile,
  TooShort,
  ZeroVariance,
  LagTooLarge,
  // hydraulics
  NonPositiveInput,
  FlowExceedsCapacity,
  NonConvergence,
  // model / training
  InvalidConfig,
  NonFiniteGradient,
  EmptyDataset,
  CorruptCheckpoint,
  FingerprintMismatch,
  // evaluation
  EmptyInput,
  AllExcluded,
  InsufficientHistory,
  ZeroResidualVariance,
  // io
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Broad failure class, used by the command-line tool to pick an exit code.
enum class ErrorCategory { Config, Data, Numerical };

ErrorCategory category(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hydronet
