#include "attenmia/error.h"

namespace attenmia {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnknownSample: return "UnknownSample";
    case ErrorCode::kCorruptTensor: return "CorruptTensor";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kHeterogeneousShape: return "HeterogeneousShape";
    case ErrorCode::kDuplicateSampleId: return "DuplicateSampleId";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvalidLogProb: return "InvalidLogProb";
    case ErrorCode::kMissingTensor: return "MissingTensor";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteWeight: return "NonFiniteWeight";
    case ErrorCode::kTokenOutOfVocab: return "TokenOutOfVocab";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kTooFewLayers: return "TooFewLayers";
    case ErrorCode::kInvalidPositions: return "InvalidPositions";
    case ErrorCode::kEmptyResult: return "EmptyResult";
    case ErrorCode::kEmptyAlignment: return "EmptyAlignment";
    case ErrorCode::kKMaxTooLarge: return "KMaxTooLarge";
    case ErrorCode::kSampleSetMismatch: return "SampleSetMismatch";
    case ErrorCode::kSchemaCollision: return "SchemaCollision";
    case ErrorCode::kSingleClassFold: return "SingleClassFold";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kDegenerateClasses: return "DegenerateClasses";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kTooFewVectors: return "TooFewVectors";
    case ErrorCode::kEmptyRecord: return "EmptyRecord";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kMissingRequiredRecord: return "MissingRequiredRecord";
    case ErrorCode::kZeroDenominator: return "ZeroDenominator";
    case ErrorCode::kMissingDump: return "MissingDump";
    case ErrorCode::kSelectionTooLarge: return "SelectionTooLarge";
    case ErrorCode::kInvalidShape: return "InvalidShape";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Internal";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kCorruptTensor:
    case ErrorCode::kInvalidLogProb:
    case ErrorCode::kNonFiniteWeight:
    case ErrorCode::kSingleClassFold:
    case ErrorCode::kDegenerateClasses:
    case ErrorCode::kZeroDenominator:
      return 3;
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kInternal:
      return 4;
    default:
      return 2;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace attenmia
