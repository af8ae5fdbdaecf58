// Copyright 2026 The NeuronLens Authors.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neuronlens {

enum class ErrorCode {
  kInvalidArgument,
  kUnsupportedArchitecture,
  kWeightLoadError,
  kShapeMismatch,
  kNeuronOutOfRange,
  kNonFiniteLoss,
  kEmptyMistakeSet,
  kEncoderUnavailable,
  kDegenerateMap,
  kNumericOverflow,
  kDivergenceDetected,
  kClassTooSmall,
  kEmptySplit,
  kSplitMismatch,
  kUnknownRun,
  kUnknownNeuron,
  kUnknownJob,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above so
// callers (the HTTP layer in particular) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnsupportedArchitecture: return "UnsupportedArchitecture";
    case ErrorCode::kWeightLoadError: return "WeightLoadError";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNeuronOutOfRange: return "NeuronOutOfRange";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kEmptyMistakeSet: return "EmptyMistakeSet";
    case ErrorCode::kEncoderUnavailable: return "EncoderUnavailable";
    case ErrorCode::kDegenerateMap: return "DegenerateMap";
    case ErrorCode::kNumericOverflow: return "NumericOverflow";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
    case ErrorCode::kClassTooSmall: return "ClassTooSmall";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kSplitMismatch: return "SplitMismatch";
    case ErrorCode::kUnknownRun: return "UnknownRun";
    case ErrorCode::kUnknownNeuron: return "UnknownNeuron";
    case ErrorCode::kUnknownJob: return "UnknownJob";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace neuronlens
