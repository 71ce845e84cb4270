// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"
#include "fairjudge/taskgen.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {
namespace {

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

double biased_fraction(const std::vector<BiasSample>& s) {
  std::size_t b = 0;
  for (const auto& x : s) b += x.y_star == Verdict::Biased ? 1 : 0;
  return static_cast<double>(b) / static_cast<double>(s.size());
}

TEST(TemplateTest, LabelsFollowTheRuleTable) {
  const auto t = default_table();
  std::set<std::string> ids;
  for (const auto& e : t.entries) {
    EXPECT_TRUE(ids.insert(e.id).second);
    EXPECT_EQ(e.label, rule_label(e.stance, e.polarity)) << e.id;
  }
  EXPECT_EQ(oracle_label("all women are lazy .", t), Verdict::Biased);
  EXPECT_EQ(oracle_label("saying that women are lazy is wrong .", t), Verdict::Unbiased);
  EXPECT_EQ(oracle_label("saying that women are not lazy is wrong .", t), Verdict::Biased);
  EXPECT_EQ(code_of([&] { oracle_label("the weather is nice today", t); }), ErrorCode::UnknownTemplate);
  EXPECT_EQ(code_of([&] { oracle_label("all aliens are lazy .", t); }), ErrorCode::UnknownTemplate);
  EXPECT_EQ(code_of([&] { oracle_label("all  women are lazy .", t); }), ErrorCode::UnknownTemplate);
}

TEST(TemplateTest, ImplicitWordsAppearInBothClasses) {
  const auto t = default_table();
  std::map<std::string, std::set<Verdict>> seen;
  for (const auto& e : t.entries) {
    if (e.difficulty != Difficulty::Implicit) continue;
    for (const auto& [x, fillers] : t.expand(e)) {
      std::istringstream in(x);
      for (std::string w; in >> w;) seen[w].insert(e.label);
    }
  }
  for (const auto& n : t.slots.at("{n}")) EXPECT_EQ(seen[n].size(), 2u) << n;
  for (const auto& [w, labels] : seen) EXPECT_EQ(labels.size(), 2u) << w;
}

TEST(TemplateTest, ExpandMatchesCountAndIsDistinct) {
  const auto t = default_table();
  for (const auto& e : t.entries) {
    const auto items = t.expand(e);
    EXPECT_EQ(items.size(), t.instantiations(e));
    std::set<std::string> distinct;
    for (const auto& [x, f] : items) {
      distinct.insert(x);
      const auto m = match_template(x, t);
      ASSERT_TRUE(m.has_value());
      EXPECT_EQ(m->entry->id, e.id);
      EXPECT_EQ(m->fillers, f);
    }
    EXPECT_EQ(distinct.size(), items.size());
  }
}

TEST(CorpusTest, SizesBalanceAndDisjointness) {
  const auto t = default_table();
  const auto corpus = generate_corpus(t, 200, 100, 7);
  ASSERT_EQ(corpus.size(), 300u);
  const auto train = split_of(corpus, Split::Train);
  const auto held = split_of(corpus, Split::Heldout);
  EXPECT_EQ(train.size(), 200u);
  EXPECT_EQ(held.size(), 100u);
  for (const auto* part : {&train, &held}) {
    EXPECT_GE(biased_fraction(*part), 0.45);
    EXPECT_LE(biased_fraction(*part), 0.55);
  }
  std::set<std::string> distinct;
  for (const auto& s : corpus) {
    distinct.insert(s.x);
    EXPECT_EQ(oracle_label(s.x, t), s.y_star);
    EXPECT_EQ(t.find(s.template_id)->label, s.y_star);
    EXPECT_NE(s.x.find(s.group), std::string::npos);
  }
  EXPECT_EQ(distinct.size(), 300u);
}

TEST(CorpusTest, DeterministicPerSeed) {
  const auto t = default_table();
  EXPECT_EQ(generate_corpus(t, 50, 20, 3), generate_corpus(t, 50, 20, 3));
  EXPECT_NE(generate_corpus(t, 50, 20, 3), generate_corpus(t, 50, 20, 4));
}

TEST(CorpusTest, ExhaustionAndZeroCounts) {
  const auto t = default_table();
  std::size_t unbiased_space = 0;
  for (const auto& e : t.entries) unbiased_space += e.label == Verdict::Unbiased ? t.instantiations(e) : 0;
  EXPECT_EQ(code_of([&] { generate_corpus(t, 2 * unbiased_space + 2, 1, 1); }), ErrorCode::InsufficientTemplates);
  EXPECT_EQ(code_of([&] { generate_corpus(t, 0, 1, 1); }), ErrorCode::ConfigInvalid);
  EXPECT_NO_THROW(generate_corpus(t, 2 * unbiased_space - 2, 1, 1));
}

TEST(CorpusTest, JsonlRoundTrip) {
  const auto corpus = generate_corpus(default_table(), 20, 10, 5);
  const std::string text = corpus_to_jsonl(corpus, "abc");
  EXPECT_NE(text.find("\"config_hash\":\"abc\""), std::string::npos);
  EXPECT_EQ(corpus_from_jsonl(text), corpus);
}

TEST(ExternalTest, WellFormedRecords) {
  const std::string text =
      "{\"text\": \"one\", \"label\": \"biased\", \"group\": \"g\", \"source\": \"s\"}\n"
      "\n"
      "{\"text\": \"two\", \"label\": \"Unbiased\"}\n"
      "{\"text\": \"three\", \"label\": \"biased\", \"split\": \"train\"}\n";
  const auto s = parse_external(text, "file");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].source, "s");
  EXPECT_EQ(s[1].source, "file");
  EXPECT_EQ(s[1].y_star, Verdict::Unbiased);
  for (const auto& x : s) EXPECT_EQ(x.split, Split::Heldout);
  EXPECT_TRUE(parse_external("", "f").empty());
}

TEST(ExternalTest, SchemaErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_external(text, "f");
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::SchemaError);
      return e.line();
    }
    return 0;
  };
  const std::string good = "{\"text\": \"a\", \"label\": \"biased\"}\n";
  EXPECT_EQ(line_of(good + "{\"text\": \"b\", \"label\": \"toxic\"}\n"), 2u);
  EXPECT_EQ(line_of(good + good + "{\"label\": \"biased\"}\n"), 3u);
  EXPECT_EQ(line_of("{\"text\": 3, \"label\": \"biased\"}\n"), 1u);
  EXPECT_EQ(line_of("oops\n"), 1u);
  EXPECT_EQ(line_of("{\"text\": \"\", \"label\": \"biased\"}\n"), 1u);
}

TEST(ExternalTest, IngestFromFile) {
  const auto dir = std::filesystem::temp_directory_path() / "fairjudge_ingest_test";
  write_file_atomic(dir / "toy.jsonl", "{\"text\": \"a\", \"label\": \"biased\"}\n");
  const auto s = ingest_external(dir / "toy.jsonl");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].source, "toy");
  std::filesystem::remove_all(dir);
}

TEST(TeacherTest, NoiselessTracesAreCorrect) {
  const auto t = default_table();
  const auto spec = default_spec();
  for (const auto& s : generate_corpus(t, 40, 10, 9)) {
    const auto traces = teacher_generate(s.x, s.y_star, spec, t, 4, 0.0, 17);
    ASSERT_EQ(traces.size(), 4u);
    std::vector<ReasoningTrace> plain;
    std::set<std::vector<std::string>> phrasings;
    for (const auto& tt : traces) {
      EXPECT_FALSE(tt.corrupted);
      EXPECT_EQ(tt.trace.verdict, s.y_star);
      EXPECT_EQ(tt.trace.steps.size(), 3u);
      phrasings.insert(tt.trace.steps);
      plain.push_back(tt.trace);
    }
    EXPECT_EQ(phrasings.size(), 4u);
    const auto p = filter_correct(plain, s.y_star);
    EXPECT_EQ(p.correct.size(), 4u);
    EXPECT_TRUE(p.incorrect.empty());
  }
}

TEST(TeacherTest, StepsCiteRuleStandards) {
  const auto t = default_table();
  const auto spec = default_spec();
  auto rule_step = [&](const std::string& x) {
    return teacher_generate(x, oracle_label(x, t), spec, t, 1, 0.0, 1)[0].trace.steps[2];
  };
  EXPECT_NE(rule_step("all women are lazy .").find(" 4 "), std::string::npos);
  EXPECT_NE(rule_step("saying that women are lazy is wrong .").find(" 3 "), std::string::npos);
  EXPECT_NE(rule_step("it is true that women are not lazy .").find(" 5 "), std::string::npos);
  EXPECT_NE(rule_step("many women work as cooks in our town .").find(" 6 "), std::string::npos);
}

TEST(TeacherTest, CorruptionRateWithinBinomialInterval) {
  const auto t = default_table();
  const std::size_t k = 1000;
  const double p = 0.999;
  const auto traces = teacher_generate("all women are lazy .", Verdict::Biased, default_spec(), t, k, p, 5);
  std::size_t corrupted = 0;
  std::size_t wrong = 0;
  for (const auto& tt : traces) {
    corrupted += tt.corrupted ? 1 : 0;
    wrong += tt.trace.verdict != Verdict::Biased ? 1 : 0;
    if (!tt.corrupted) EXPECT_EQ(tt.trace.verdict, Verdict::Biased);
  }
  // Exact binomial: P(X <= 995) ~ 0.004 for n = 1000, p = 0.999.
  EXPECT_GE(corrupted, 996u);
  EXPECT_GT(wrong, 400u);
  EXPECT_LT(wrong, 600u);
}

TEST(TeacherTest, DeterministicAndValidated) {
  const auto t = default_table();
  const auto spec = default_spec();
  auto a = teacher_generate("all men are rude .", Verdict::Biased, spec, t, 8, 0.3, 2);
  auto b = teacher_generate("all men are rude .", Verdict::Biased, spec, t, 8, 0.3, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].trace.raw_text, b[i].trace.raw_text);
  EXPECT_EQ(code_of([&] { teacher_generate("x", Verdict::Biased, spec, t, 1, 1.0, 1); }), ErrorCode::ConfigInvalid);
  EXPECT_EQ(code_of([&] { teacher_generate("x", Verdict::Biased, spec, t, 0, 0.1, 1); }), ErrorCode::ConfigInvalid);
  const auto generic = teacher_generate("free text", Verdict::Unbiased, spec, t, 2, 0.0, 1);
  EXPECT_EQ(generic[0].trace.verdict, Verdict::Unbiased);
}

TEST(TeacherTest, CorrectTracesRespectRetryBudget) {
  const auto t = default_table();
  const auto spec = default_spec();
  const auto ok = correct_teacher_traces("all men are rude .", Verdict::Biased, spec, t, 4, 0.5, 3);
  EXPECT_EQ(ok.size(), 4u);
  for (const auto& tr : ok) EXPECT_EQ(tr.verdict, Verdict::Biased);
  // Same stream as teacher_generate: the first k correct of the 5k attempts.
  const auto all = teacher_generate("all men are rude .", Verdict::Biased, spec, t, 20, 0.9, 3);
  std::vector<std::string> expected;
  for (const auto& tt : all) {
    if (tt.trace.verdict == Verdict::Biased && expected.size() < 4) expected.push_back(tt.trace.raw_text);
  }
  const auto noisy = correct_teacher_traces("all men are rude .", Verdict::Biased, spec, t, 4, 0.9, 3);
  std::vector<std::string> got;
  for (const auto& tr : noisy) got.push_back(tr.raw_text);
  EXPECT_EQ(got, expected);
}

TEST(FilterTest, Partitions) {
  const auto biased = parse_trace("Final Answer: biased");
  const auto unbiased = parse_trace("Final Answer: unbiased");
  const auto broken = parse_trace("garbage");
  auto p = filter_correct({biased, biased, biased, unbiased}, Verdict::Biased);
  EXPECT_EQ(p.correct.size(), 3u);
  EXPECT_EQ(p.incorrect.size(), 1u);
  p = filter_correct({broken, broken}, Verdict::Unbiased);
  EXPECT_EQ(p.correct.size(), 0u);
  EXPECT_EQ(p.incorrect.size(), 2u);
  p = filter_correct({}, Verdict::Biased);
  EXPECT_TRUE(p.correct.empty() && p.incorrect.empty());
}

TEST(LexiconTest, CoversCorpusTracesAndPrompts) {
  const auto t = default_table();
  const auto spec = default_spec();
  const Vocab vocab = Vocab::build(lexicon_texts(t, spec));
  for (const auto& s : generate_corpus(t, 100, 50, 1)) {
    EXPECT_NO_THROW(encode(assemble_prompt(spec, s.x, PromptMode::WithSpec), vocab));
    for (const auto& tt : teacher_generate(s.x, s.y_star, spec, t, 4, 0.5, 2)) {
      EXPECT_NO_THROW(encode(tt.trace.raw_text, vocab)) << tt.trace.raw_text;
    }
  }
  EXPECT_LT(vocab.size(), 400u);
}

TEST(ShortcutTest, UnigramBaselineCannotSolveImplicitSubset) {
  const auto t = default_table();
  const auto corpus = generate_corpus(t, 400, 200, 11);
  std::vector<BiasSample> train;
  std::vector<BiasSample> held;
  for (const auto& s : corpus) {
    if (!is_implicit(s, t)) continue;
    (s.split == Split::Train ? train : held).push_back(s);
  }
  const auto clf = UnigramClassifier::fit(train);
  EXPECT_LT(clf.accuracy(held), 0.95);
  std::size_t oracle_correct = 0;
  for (const auto& s : held) oracle_correct += oracle_label(s.x, t) == s.y_star ? 1 : 0;
  EXPECT_EQ(oracle_correct, held.size());

  // Same learner separates the explicit subset, so the check is not vacuous.
  std::vector<BiasSample> etrain;
  std::vector<BiasSample> eheld;
  for (const auto& s : corpus) {
    if (is_implicit(s, t)) continue;
    (s.split == Split::Train ? etrain : eheld).push_back(s);
  }
  EXPECT_GT(UnigramClassifier::fit(etrain).accuracy(eheld), 0.95);
}

}  // namespace
}  // namespace fairjudge
