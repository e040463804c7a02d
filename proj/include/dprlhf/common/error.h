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

#ifndef DPRLHF_COMMON_ERROR_H_
#define DPRLHF_COMMON_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace dprlhf {

enum class ErrorCode {
  kInvalidArgument,
  kSequenceTooLong,
  kEmptyTarget,
  kShapeMismatch,
  kNonFinite,
  kStepBudgetExhausted,
  kClipViolation,
  kNumericalOverflow,
  kEmptyCurve,
  kUnattainableTarget,
  kMismatchedDelta,
  kGenerationFailure,
  kTooFewGroups,
  kTooShortSequence,
  kEmptyText,
  kSingleClass,
  kCanaryCollision,
  kMissingLexicon,
  kLengthMismatch,
  kEmptyResponse,
  kConfigInvalid,
  kMissingPrerequisite,
  kBudgetViolation,
  kCorruptCheckpoint,
  kIo,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures surface as this exception. The CLI maps the code to a
// process exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void Require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) Fail(code, message);
}

}  // namespace dprlhf

#endif  // DPRLHF_COMMON_ERROR_H_
