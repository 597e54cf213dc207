/* Copyright 2026 The resilplan Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace resilplan {

// Machine-readable error categories. The string form is what the CLI emits
// in its error JSON, so keep these stable.
enum class ErrorCode {
  kParse,
  kInvalidArgument,
  kMissingDeviceEntry,
  kEmptyModel,
  kEmptyStage,
  kModelDoesNotFit,
  kInsufficientReplicas,
  kTooFewLayers,
  kInfeasibleDistribution,
  kBatchNotDivisible,
  kUnknownNode,
  kDuplicateNode,
  kUnrecoverable,
  kNoFeasiblePlan,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kMissingDeviceEntry: return "missing_device_entry";
    case ErrorCode::kEmptyModel: return "empty_model";
    case ErrorCode::kEmptyStage: return "empty_stage";
    case ErrorCode::kModelDoesNotFit: return "model_does_not_fit";
    case ErrorCode::kInsufficientReplicas: return "insufficient_replicas";
    case ErrorCode::kTooFewLayers: return "too_few_layers";
    case ErrorCode::kInfeasibleDistribution: return "infeasible_distribution";
    case ErrorCode::kBatchNotDivisible: return "batch_not_divisible";
    case ErrorCode::kUnknownNode: return "unknown_node";
    case ErrorCode::kDuplicateNode: return "duplicate_node";
    case ErrorCode::kUnrecoverable: return "unrecoverable";
    case ErrorCode::kNoFeasiblePlan: return "no_feasible_plan";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Error(ErrorCode code, const std::string& message,
        std::int64_t recommended_global_batch)
      : std::runtime_error(message),
        code_(code),
        recommended_global_batch_(recommended_global_batch) {}

  ErrorCode code() const { return code_; }

  // Set when the failure is a batch that cannot be split across the
  // requested pipelines; holds the nearest distributable global batch.
  const std::optional<std::int64_t>& recommended_global_batch() const {
    return recommended_global_batch_;
  }

 private:
  ErrorCode code_;
  std::optional<std::int64_t> recommended_global_batch_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) throw Error(code, message);
}

}  // namespace detail
}  // namespace resilplan
