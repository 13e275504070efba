#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attenmia {

enum class ErrorCode {
  // attn-data
  kBadMagic,
  kUnknownSample,
  kCorruptTensor,
  kTruncatedFile,
  kHeterogeneousShape,
  kDuplicateSampleId,
  kIoFailure,
  kInvalidLogProb,
  // tiny-transformer
  kMissingTensor,
  kShapeMismatch,
  kNonFiniteWeight,
  kTokenOutOfVocab,
  kSequenceTooLong,
  // features / perturb
  kIndexOutOfRange,
  kTooFewLayers,
  kInvalidPositions,
  kEmptyResult,
  kEmptyAlignment,
  kKMaxTooLarge,
  // classifier
  kSampleSetMismatch,
  kSchemaCollision,
  kSingleClassFold,
  kNonFiniteLoss,
  kSchemaMismatch,
  // metrics
  kDegenerateClasses,
  kEmptyInput,
  kTooFewVectors,
  // baselines
  kEmptyRecord,
  kEmptyText,
  kLengthMismatch,
  kMissingRequiredRecord,
  kZeroDenominator,
  // extraction / cli
  kMissingDump,
  kSelectionTooLarge,
  kInvalidShape,
  kInvalidArgument,
  kInternal,
};

std::string_view error_code_name(ErrorCode code);

// Process exit status for an error: 2 input/format, 3 invariant violation in
// data, 4 internal.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace attenmia
