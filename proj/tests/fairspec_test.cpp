// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "fairjudge/error.hpp"
#include "fairjudge/fairspec.hpp"
#include "fairjudge/io.hpp"
#include "fairjudge/rng.hpp"

namespace fairjudge {
namespace {

SpecDocument two_standard_spec() {
  SpecDocument s;
  s.preamble = "judge the text .";
  s.standards = {{1, "first", "rule one text ."}, {2, "second", "rule two text ."}};
  s.answer_format_instruction = "answer in steps .";
  return s;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

TEST(VerdictTest, StringForms) {
  EXPECT_EQ(to_string(Verdict::Biased), "biased");
  EXPECT_EQ(to_string(Verdict::Unbiased), "unbiased");
  EXPECT_EQ(parse_verdict("BiAsEd"), Verdict::Biased);
  EXPECT_EQ(parse_verdict("UNBIASED"), Verdict::Unbiased);
  EXPECT_FALSE(parse_verdict("toxic").has_value());
  EXPECT_EQ(flip(Verdict::Biased), Verdict::Unbiased);
}

TEST(PromptTest, WithSpecContainsEverythingAndEndsWithCue) {
  const auto spec = two_standard_spec();
  const std::string p = assemble_prompt(spec, "sample", PromptMode::WithSpec);
  EXPECT_NE(p.find("rule one text ."), std::string::npos);
  EXPECT_NE(p.find("rule two text ."), std::string::npos);
  EXPECT_NE(p.find("sample"), std::string::npos);
  EXPECT_NE(p.find(spec.preamble), std::string::npos);
  EXPECT_NE(p.find(spec.answer_format_instruction), std::string::npos);
  EXPECT_TRUE(p.ends_with("Step 1."));
  EXPECT_LT(p.find(spec.preamble), p.find("rule one"));
  EXPECT_LT(p.find("rule two"), p.find("sample"));
  EXPECT_LT(p.find("sample"), p.find(spec.answer_format_instruction));
}

TEST(PromptTest, BareOmitsRules) {
  const auto spec = two_standard_spec();
  const std::string p = assemble_prompt(spec, "sample", PromptMode::Bare);
  EXPECT_NE(p.find("sample"), std::string::npos);
  EXPECT_EQ(p.find("rule one"), std::string::npos);
  EXPECT_EQ(p.find("rule two"), std::string::npos);
  EXPECT_TRUE(p.ends_with("Step 1."));
}

TEST(PromptTest, InjectiveAndDeterministic) {
  const auto spec = default_spec();
  for (auto mode : {PromptMode::WithSpec, PromptMode::Bare}) {
    EXPECT_NE(assemble_prompt(spec, "a b", mode), assemble_prompt(spec, "a c", mode));
    EXPECT_EQ(assemble_prompt(spec, "a b", mode), assemble_prompt(spec, "a b", mode));
  }
  EXPECT_EQ(code_of([&] { assemble_prompt(spec, "", PromptMode::Bare); }), ErrorCode::EmptyPrompt);
}

TEST(PromptTest, EncodeAddsBosAndEnforcesBudget) {
  const auto spec = two_standard_spec();
  const std::string text = assemble_prompt(spec, "sample", PromptMode::WithSpec);
  const Vocab vocab = Vocab::build({text});
  const std::size_t n = encode(text, vocab).size() + 1;
  const TokenSeq seq = encode_prompt(spec, "sample", PromptMode::WithSpec, vocab, n + kMinCompletionBudget);
  EXPECT_EQ(seq.ids.front(), vocab.bos());
  EXPECT_EQ(seq.size(), n);
  EXPECT_EQ(seq.boundary, n);
  EXPECT_EQ(code_of([&] {
              encode_prompt(spec, "sample", PromptMode::WithSpec, vocab, n + kMinCompletionBudget - 1);
            }),
            ErrorCode::PromptTooLong);
  EXPECT_EQ(code_of([&] { encode_prompt(spec, "unseen", PromptMode::WithSpec, vocab, 512); }),
            ErrorCode::UnknownToken);
  const TokenSeq lenient = encode_prompt(spec, "unseen", PromptMode::WithSpec, vocab, 512, true);
  EXPECT_EQ(lenient.size(), n);
}

TEST(SpecTest, DefaultHasSevenOrderedStandards) {
  const auto spec = default_spec();
  EXPECT_NO_THROW(spec.validate());
  ASSERT_EQ(spec.standards.size(), 7u);
  EXPECT_EQ(spec.standard_id(0), 1);
  EXPECT_EQ(spec.standard_id(100), 7);
  EXPECT_EQ(assemble_prompt(spec, "x", PromptMode::WithSpec).find(kFinalAnswerMarker), std::string::npos);
}

TEST(SpecTest, ValidateRejectsEmptyAndUnordered) {
  SpecDocument s = two_standard_spec();
  s.standards.clear();
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::SpecInvalid);
  s = two_standard_spec();
  std::swap(s.standards[0], s.standards[1]);
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::SpecInvalid);
}

TEST(SpecTest, FileRoundTrip) {
  const auto spec = default_spec();
  EXPECT_EQ(parse_spec(serialize_spec(spec)), spec);
  const auto dir = std::filesystem::temp_directory_path() / "fairjudge_spec_test";
  write_file_atomic(dir / "spec.jsonl", "\n" + serialize_spec(spec) + "\n\n");
  EXPECT_EQ(load_spec(dir / "spec.jsonl"), spec);
  std::filesystem::remove_all(dir);
}

TEST(SpecTest, LoaderRejectsDuplicatesWithLineNumber) {
  const std::string text =
      "{\"preamble\": \"p\"}\n"
      "{\"id\": 1, \"title\": \"a\", \"rule_text\": \"r\"}\n"
      "\n"
      "{\"id\": 1, \"title\": \"b\", \"rule_text\": \"s\"}\n";
  try {
    parse_spec(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateStandard);
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(SpecTest, LoaderRejectsMalformedRecords) {
  EXPECT_EQ(code_of([] { parse_spec("{\"id\": 1, \"title\": \"a\"}\n"); }), ErrorCode::SpecInvalid);
  EXPECT_EQ(code_of([] { parse_spec("not json\n"); }), ErrorCode::SpecInvalid);
  EXPECT_EQ(code_of([] { parse_spec("{\"preamble\": \"p\"}\n"); }), ErrorCode::SpecInvalid);
}

TEST(TraceTest, ParsesInlineSteps) {
  const auto t = parse_trace("Step 1. analyze. Step 2. check. Final Answer: biased");
  ASSERT_EQ(t.steps.size(), 2u);
  EXPECT_EQ(t.steps[0], "analyze.");
  EXPECT_EQ(t.steps[1], "check.");
  EXPECT_EQ(t.verdict, Verdict::Biased);
}

TEST(TraceTest, VerdictOnly) {
  const auto t = parse_trace("Final Answer: unbiased");
  EXPECT_TRUE(t.steps.empty());
  EXPECT_EQ(t.verdict, Verdict::Unbiased);
  EXPECT_EQ(parse_trace("Final Answer:   UnBiased  \n").verdict, Verdict::Unbiased);
}

TEST(TraceTest, FailuresAreData) {
  EXPECT_FALSE(parse_trace("no marker here").parsed());
  EXPECT_FALSE(parse_trace("").parsed());
  EXPECT_FALSE(parse_trace("Final Answer: maybe").parsed());
  EXPECT_FALSE(parse_trace("final answer: biased").parsed());
  EXPECT_FALSE(parse_trace("Final Answer: biased\nFinal Answer: biased").parsed());
  EXPECT_FALSE(parse_trace("Final Answer: biased\nFinal Answer: unbiased").parsed());
  EXPECT_EQ(parse_trace("no marker here").raw_text, "no marker here");
}

TEST(TraceTest, StepsMustIncrease) {
  const auto t = parse_trace("Step 2. late\nStep 1. early\nStep 2. second\nFinal Answer: biased");
  ASSERT_EQ(t.steps.size(), 2u);
  EXPECT_EQ(t.steps[0], "early");
  EXPECT_EQ(t.steps[1], "second");
}

TEST(TraceTest, RenderFixtures) {
  EXPECT_EQ(render_trace({}, Verdict::Biased), "Final Answer: biased");
  const std::string r = render_trace({"a", "b"}, Verdict::Unbiased);
  EXPECT_EQ(r, "Step 1. a\nStep 2. b\nFinal Answer: unbiased");
  const auto t = parse_trace(r);
  EXPECT_EQ(t.steps, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.verdict, Verdict::Unbiased);
}

TEST(TraceTest, RenderRejectsMarkers) {
  EXPECT_EQ(code_of([] { render_trace({"so Final Answer: biased"}, Verdict::Biased); }),
            ErrorCode::StepContainsMarker);
  EXPECT_EQ(code_of([] { render_trace({"see Step 3. here"}, Verdict::Biased); }), ErrorCode::StepContainsMarker);
  EXPECT_EQ(code_of([] { render_trace({""}, Verdict::Biased); }), ErrorCode::MalformedStep);
  EXPECT_EQ(code_of([] { render_trace({"two\nlines"}, Verdict::Biased); }), ErrorCode::MalformedStep);
  EXPECT_EQ(code_of([] { render_trace({" padded"}, Verdict::Biased); }), ErrorCode::MalformedStep);
  EXPECT_NO_THROW(render_trace({"Step one is fine"}, Verdict::Biased));
}

TEST(TraceTest, RoundTripProperty) {
  const std::string alphabet = "abcdefgh .,:;'-0123456789SFA";
  Rng rng(21);
  int rendered = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::string> steps(rng.below(6));
    for (auto& s : steps) {
      const std::size_t len = 1 + rng.below(20);
      for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
    }
    const Verdict v = rng.bernoulli(0.5) ? Verdict::Biased : Verdict::Unbiased;
    std::string text;
    try {
      text = render_trace(steps, v);
    } catch (const Error&) {
      continue;
    }
    ++rendered;
    const auto t = parse_trace(text);
    EXPECT_EQ(t.steps, steps) << text;
    EXPECT_EQ(t.verdict, v) << text;
  }
  EXPECT_GT(rendered, 1000);
}

TEST(TraceTest, CueHelpersInvertEachOther) {
  for (const auto& steps : std::vector<std::vector<std::string>>{{}, {"a"}, {"a", "b c"}}) {
    const std::string r = render_trace(steps, Verdict::Biased);
    const auto t = parse_trace(with_cue(strip_cue(r)));
    EXPECT_EQ(t.steps, steps);
    EXPECT_EQ(t.verdict, Verdict::Biased);
  }
  EXPECT_EQ(strip_cue("Step 1. a\nFinal Answer: biased"), "a\nFinal Answer: biased");
  EXPECT_EQ(with_cue("a\nFinal Answer: biased"), "Step 1. a\nFinal Answer: biased");
  EXPECT_EQ(with_cue("\nFinal Answer: biased"), "Step 1.\nFinal Answer: biased");
}

}  // namespace
}  // namespace fairjudge
