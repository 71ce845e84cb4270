// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairjudge/vocab.hpp"

namespace fairjudge {

enum class Verdict { Biased, Unbiased };

std::string_view to_string(Verdict v);
// Case-insensitive "biased" / "unbiased".
std::optional<Verdict> parse_verdict(std::string_view label);
inline Verdict flip(Verdict v) { return v == Verdict::Biased ? Verdict::Unbiased : Verdict::Biased; }

// A parsed model judgment; std::nullopt is a parse failure.
using Prediction = std::optional<Verdict>;

struct Standard {
  int id = 0;
  std::string title;
  std::string rule_text;

  bool operator==(const Standard&) const = default;
};

// Fairness specification injected into the judge prompt.
struct SpecDocument {
  std::string preamble;
  std::vector<Standard> standards;
  std::string answer_format_instruction;

  // At least one standard, ids strictly increasing. Throws SpecInvalid.
  void validate() const;
  std::string render_standards() const;
  // Standard id for a role position (0-based); clamps to the last standard.
  int standard_id(std::size_t role) const;

  bool operator==(const SpecDocument&) const = default;
};

// Seven standards covering sentence structure, speaker attitude,
// counter-speech and quotation, group generalisation, stereotype denial,
// neutral description and the final judgment rule.
SpecDocument default_spec();

// Line-delimited JSON, one record per line:
//   {"preamble": "..."}
//   {"answer_format_instruction": "..."}
//   {"id": 1, "title": "...", "rule_text": "..."}
// Blank lines are ignored. Throws SpecInvalid(line) / DuplicateStandard(line).
SpecDocument parse_spec(const std::string& text);
std::string serialize_spec(const SpecDocument& spec);
SpecDocument load_spec(const std::filesystem::path& path);

enum class PromptMode { WithSpec, Bare };

inline constexpr std::string_view kStepCue = "Step 1.";
inline constexpr std::string_view kFinalAnswerMarker = "Final Answer:";
inline constexpr std::size_t kMinCompletionBudget = 16;

// preamble, standards (WithSpec only), "text : x", answer instruction and
// the "Step 1." cue, one per line.
std::string assemble_prompt(const SpecDocument& spec, std::string_view x, PromptMode mode);

// <bos> + tokens of assemble_prompt. Throws PromptTooLong when fewer than
// kMinCompletionBudget positions would remain in the context.
TokenSeq encode_prompt(const SpecDocument& spec, std::string_view x, PromptMode mode,
                       const Vocab& vocab, std::size_t context_len, bool lenient = false);

// Load-time check that the longest sample still leaves the completion budget.
void check_spec_fits(const SpecDocument& spec, const Vocab& vocab, std::string_view longest_x,
                     std::size_t context_len);

struct ReasoningTrace {
  std::vector<std::string> steps;
  Prediction verdict;
  std::string raw_text;

  bool parsed() const { return verdict.has_value(); }
};

// Extracts "Step i." segments (i = 1, 2, ... in order, empty segments
// dropped) and the single "Final Answer: <label>" line. Missing, repeated
// or unrecognised final answers give verdict == nullopt; never throws.
ReasoningTrace parse_trace(std::string_view raw);

// Inverse of parse_trace. Throws StepContainsMarker when a step embeds
// "Step <digit>." or the final-answer marker, MalformedStep when a step is
// empty, spans lines or has surrounding whitespace.
std::string render_trace(const std::vector<std::string>& steps, Verdict verdict);

// Text generated after the prompt's cue: the rendered trace minus its
// leading "Step 1. ". A trace without steps is kept whole.
std::string strip_cue(const std::string& rendered_trace);
// Inverse of strip_cue for decoded completions.
std::string with_cue(const std::string& completion_text);

// prompt + tokens of strip_cue(rendered_trace) + <eos>, boundary at the end
// of the prompt. Throws UnknownToken, SeqTooLong.
TokenSeq append_trace(const TokenSeq& prompt, const std::string& rendered_trace, const Vocab& vocab,
                      std::size_t context_len);
// Reads a generated completion back: trailing <eos> dropped, cue restored,
// then parse_trace.
ReasoningTrace parse_completion(const TokenSeq& seq, const Vocab& vocab);

}  // namespace fairjudge
