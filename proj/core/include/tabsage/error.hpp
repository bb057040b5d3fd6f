#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabsage {

enum class ErrorCode {
  // dataset
  MissingFile,
  SchemaMismatch,
  ParseError,
  MissingValue,
  EmptyData,
  InvalidValue,
  DivisionByZero,
  EmptyTable,
  TooFewRecords,
  UnknownFeatureGroup,
  // knn_graph
  KTooLarge,
  EmptyFeatures,
  IndexOutOfRange,
  // autodiff
  ShapeMismatch,
  IsolatedNode,
  SingleRowTrainBatch,
  InvalidRate,
  EmptyMask,
  NonScalarLoss,
  DoubleBackward,
  NonFinite,
  // sage_model / trainer
  InvalidConfig,
  NonFiniteGradient,
  DivergedLoss,
  CheckpointFormat,
  // forest
  EmptyTrainSet,
  DimensionMismatch,
  UnfittedForest,
  TooFewRows,
  // metrics
  LengthMismatch,
  ZeroVarianceActuals,
  ZeroActual,
  // experiment runner
  NoResultsFound,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every module reports failures through this one exception type; `code()`
// identifies the failure and `what()` carries the location details.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tabsage
