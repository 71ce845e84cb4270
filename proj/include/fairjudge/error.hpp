// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fairjudge {

enum class ErrorCode {
  UnknownToken,
  SeqTooLong,
  EmptyCompletion,
  EmptyPrompt,
  NonFiniteGradient,
  NonFiniteParameter,
  ShapeMismatch,
  CheckpointCorrupt,
  PromptTooLong,
  StepContainsMarker,
  MalformedStep,
  SpecInvalid,
  DuplicateStandard,
  InsufficientTemplates,
  UnknownTemplate,
  SchemaError,
  NoPairsFound,
  LengthMismatch,
  EmptyEval,
  MissingCheckpoint,
  MissingPrerequisite,
  ConfigInvalid,
  ConfigMismatch,
  ArtifactExists,
  Io,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  // 1-based line number for file-format errors, 0 otherwise.
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace fairjudge
