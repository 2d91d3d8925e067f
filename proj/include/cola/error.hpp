#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cola {

enum class ErrorCode {
  // lidar_io
  MalformedScan,
  NonFiniteValue,
  LengthMismatch,
  MissingLabel,
  EmptyDataset,
  IoFailure,
  // taxonomy
  ParseError,
  DuplicateFineId,
  UnknownCoarseName,
  UnmappedLabel,
  // synthgen / featurize
  PlacementFailure,
  InvalidConfig,
  InvalidVoxelSize,
  // model
  InvalidWidth,
  ShapeMismatch,
  UnknownHead,
  CorruptCheckpoint,
  // losses / metrics
  EmptyBatch,
  OutOfRangeClass,
  NoEvaluableClass,
  // harness
  TooFewScenes,
  ValidationFailure,
  ClassCountMismatch,
  Diverged,
};

/// Broad failure class; the CLI maps these onto exit codes.
enum class ErrorCategory { Data, Numeric };

std::string_view error_name(ErrorCode code);
ErrorCategory error_category(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return error_category(code_); }

 private:
  ErrorCode code_;
};

}  // namespace cola
