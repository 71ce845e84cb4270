// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairjudge/fairspec.hpp"

namespace fairjudge {

enum class Split { Train, Heldout };
std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

enum class Difficulty { Explicit, Implicit };

// How the speaker relates to the claim in a template.
enum class Stance { Endorse, Reject, Describe };
// Whether the embedded claim asserts or denies the negative attribute.
enum class Polarity { Affirm, Deny };

struct BiasSample {
  std::string x;
  Verdict y_star = Verdict::Unbiased;
  std::string template_id;
  std::string group;
  std::string source;
  Split split = Split::Train;

  bool operator==(const BiasSample&) const = default;
};

// Pattern words are separated by single spaces; slots are {g} (group),
// {n} (negative adjective), {p} (positive adjective) and {o} (occupation).
struct TemplateEntry {
  std::string id;
  std::string pattern;
  Verdict label = Verdict::Unbiased;
  Difficulty difficulty = Difficulty::Explicit;
  Stance stance = Stance::Describe;
  Polarity polarity = Polarity::Affirm;
};

struct TemplateTable {
  std::vector<TemplateEntry> entries;
  std::map<std::string, std::vector<std::string>> slots;  // "{g}" -> fillers

  const TemplateEntry* find(const std::string& id) const;
  // Number of distinct strings the entry can produce.
  std::size_t instantiations(const TemplateEntry& entry) const;
  // All instantiations, fillers enumerated in slot order.
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> expand(
      const TemplateEntry& entry) const;
};

// Explicit templates state or avoid a negative generalisation directly.
// Implicit templates wrap a claim ("g are n" / "g are not n") in an
// endorsing or rejecting frame; the label is the XOR of frame and claim
// polarity, so every implicit word occurs equally often in both classes.
TemplateTable default_table();

// Label rule: endorsed affirmation or rejected denial of a negative claim
// is biased; everything else is not.
Verdict rule_label(Stance stance, Polarity polarity);

struct TemplateMatch {
  const TemplateEntry* entry = nullptr;
  std::map<std::string, std::string> fillers;
};

std::optional<TemplateMatch> match_template(const std::string& x, const TemplateTable& table);

// Throws UnknownTemplate.
Verdict oracle_label(const std::string& x, const TemplateTable& table);

// Exact per-split label balance (floor(n/2) biased). Templates are chosen
// uniformly within each label, then an unused instantiation. Throws
// InsufficientTemplates, ConfigInvalid for zero counts.
std::vector<BiasSample> generate_corpus(const TemplateTable& table, std::size_t n_train,
                                        std::size_t n_heldout, std::uint64_t seed);

std::vector<BiasSample> split_of(const std::vector<BiasSample>& corpus, Split split);
bool is_implicit(const BiasSample& sample, const TemplateTable& table);

// Texts covering every word the corpus, teacher traces and prompts can use.
std::vector<std::string> lexicon_texts(const TemplateTable& table, const SpecDocument& spec);

// Every step phrasing the teacher can emit, with slots unfilled.
std::vector<std::string> teacher_phrasings();

struct TeacherTrace {
  ReasoningTrace trace;
  bool corrupted = false;
};

// k oracle traces for x. Each trace cites standards by role, uses its own
// phrasing variant and is corrupted with probability noise_rate (verdict
// flipped or step order shuffled). Texts outside the table get generic
// steps. Throws ConfigInvalid unless k >= 1 and 0 <= noise_rate < 1.
std::vector<TeacherTrace> teacher_generate(const std::string& x, Verdict y_star, const SpecDocument& spec,
                                           const TemplateTable& table, std::size_t k, double noise_rate,
                                           std::uint64_t seed);

// Up to k traces whose verdict equals y_star, drawing at most 5k attempts.
std::vector<ReasoningTrace> correct_teacher_traces(const std::string& x, Verdict y_star,
                                                   const SpecDocument& spec, const TemplateTable& table,
                                                   std::size_t k, double noise_rate, std::uint64_t seed);

struct Partition {
  std::vector<ReasoningTrace> correct;
  std::vector<ReasoningTrace> incorrect;
};

// Parse failures are incorrect.
Partition filter_correct(const std::vector<ReasoningTrace>& traces, Verdict y_star);

// One JSON object per line: text, label, group, source, split, template_id
// and the producing config hash.
std::string corpus_to_jsonl(const std::vector<BiasSample>& samples, const std::string& config_hash);
// Throws SchemaError(line).
std::vector<BiasSample> corpus_from_jsonl(const std::string& text);

// External records need text and label ("biased" / "unbiased"); group and
// source are optional. Every sample is held out. All-or-nothing: the first
// malformed line throws SchemaError(line).
std::vector<BiasSample> parse_external(const std::string& text, const std::string& default_source);
std::vector<BiasSample> ingest_external(const std::filesystem::path& path);

// Bag-of-words logistic regression used to check that the templates cannot
// be solved from word presence alone.
class UnigramClassifier {
 public:
  static UnigramClassifier fit(const std::vector<BiasSample>& train, std::size_t epochs = 500,
                               double lr = 0.5, double l2 = 1e-4);
  Verdict predict(const std::string& x) const;
  double accuracy(const std::vector<BiasSample>& samples) const;

 private:
  std::map<std::string, double> weights_;
  double bias_ = 0.0;
};

}  // namespace fairjudge
