#include "cola/error.hpp"

namespace cola {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedScan: return "MalformedScan";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateFineId: return "DuplicateFineId";
    case ErrorCode::UnknownCoarseName: return "UnknownCoarseName";
    case ErrorCode::UnmappedLabel: return "UnmappedLabel";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidVoxelSize: return "InvalidVoxelSize";
    case ErrorCode::InvalidWidth: return "InvalidWidth";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownHead: return "UnknownHead";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::OutOfRangeClass: return "OutOfRangeClass";
    case ErrorCode::NoEvaluableClass: return "NoEvaluableClass";
    case ErrorCode::TooFewScenes: return "TooFewScenes";
    case ErrorCode::ValidationFailure: return "ValidationFailure";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::Diverged: return "Diverged";
  }
  return "Unknown";
}

ErrorCategory error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch:
    case ErrorCode::EmptyBatch:
    case ErrorCode::NoEvaluableClass:
    case ErrorCode::Diverged:
    case ErrorCode::InvalidWidth:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace cola
