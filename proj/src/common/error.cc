// Copyright 2026 The dprlhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dprlhf/common/error.h"

namespace dprlhf {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kSequenceTooLong: return "sequence-too-long";
    case ErrorCode::kEmptyTarget: return "empty-target";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kStepBudgetExhausted: return "step-budget-exhausted";
    case ErrorCode::kClipViolation: return "clip-violation";
    case ErrorCode::kNumericalOverflow: return "numerical-overflow";
    case ErrorCode::kEmptyCurve: return "empty-curve";
    case ErrorCode::kUnattainableTarget: return "unattainable-target";
    case ErrorCode::kMismatchedDelta: return "mismatched-delta";
    case ErrorCode::kGenerationFailure: return "generation-failure";
    case ErrorCode::kTooFewGroups: return "too-few-groups";
    case ErrorCode::kTooShortSequence: return "too-short-sequence";
    case ErrorCode::kEmptyText: return "empty-text";
    case ErrorCode::kSingleClass: return "single-class-input";
    case ErrorCode::kCanaryCollision: return "canary-collision";
    case ErrorCode::kMissingLexicon: return "missing-lexicon";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kEmptyResponse: return "empty-response";
    case ErrorCode::kConfigInvalid: return "config-invalid";
    case ErrorCode::kMissingPrerequisite: return "missing-prerequisite";
    case ErrorCode::kBudgetViolation: return "budget-violation";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace dprlhf
