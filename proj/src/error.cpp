// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/error.hpp"

namespace fairjudge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::SeqTooLong: return "SeqTooLong";
    case ErrorCode::EmptyCompletion: return "EmptyCompletion";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CheckpointCorrupt: return "CheckpointCorrupt";
    case ErrorCode::PromptTooLong: return "PromptTooLong";
    case ErrorCode::StepContainsMarker: return "StepContainsMarker";
    case ErrorCode::MalformedStep: return "MalformedStep";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::DuplicateStandard: return "DuplicateStandard";
    case ErrorCode::InsufficientTemplates: return "InsufficientTemplates";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::NoPairsFound: return "NoPairsFound";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyEval: return "EmptyEval";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::MissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::ArtifactExists: return "ArtifactExists";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::size_t line)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      line_(line) {}

}  // namespace fairjudge
