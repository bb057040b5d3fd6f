#include "tabsage/error.hpp"

namespace tabsage {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingValue: return "MissingValue";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::TooFewRecords: return "TooFewRecords";
    case ErrorCode::UnknownFeatureGroup: return "UnknownFeatureGroup";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyFeatures: return "EmptyFeatures";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IsolatedNode: return "IsolatedNode";
    case ErrorCode::SingleRowTrainBatch: return "SingleRowTrainBatch";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::DoubleBackward: return "DoubleBackward";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::CheckpointFormat: return "CheckpointFormat";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnfittedForest: return "UnfittedForest";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVarianceActuals: return "ZeroVarianceActuals";
    case ErrorCode::ZeroActual: return "ZeroActual";
    case ErrorCode::NoResultsFound: return "NoResultsFound";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace tabsage
