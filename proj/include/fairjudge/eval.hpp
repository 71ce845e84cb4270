// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairjudge/fairspec.hpp"
#include "fairjudge/model.hpp"
#include "fairjudge/taskgen.hpp"

namespace fairjudge {

enum class AblationMode { Base, WithRule, InstructionTuning, CotSft, CotDpo };

inline constexpr AblationMode kAllModes[] = {AblationMode::Base, AblationMode::WithRule,
                                             AblationMode::InstructionTuning, AblationMode::CotSft,
                                             AblationMode::CotDpo};

// "base", "with_rule", "instruction_tuning", "cot_sft", "cot_dpo"
std::string_view to_string(AblationMode m);
std::optional<AblationMode> parse_mode(std::string_view s);
// Column label used in rendered tables.
std::string_view display_name(AblationMode m);
// Base is prompted without the specification, every other mode with it.
PromptMode prompt_mode(AblationMode m);
// Checkpoint a mode is evaluated with; WithRule reuses the base model.
AblationMode checkpoint_mode(AblationMode m);

// Greedy decode of the mode's prompt, parsed; max_new is clamped to the
// context. Throws PromptTooLong.
Prediction predict(const LmParams& params, const SpecDocument& spec, const Vocab& vocab, std::string_view x,
                   AblationMode mode, std::size_t max_new = 2048, bool lenient = false);

// predict over many texts, running the prompt prefix they share once.
std::vector<Prediction> predict_all(const LmParams& params, const SpecDocument& spec, const Vocab& vocab,
                                    const std::vector<BiasSample>& samples, AblationMode mode,
                                    std::size_t max_new = 2048, bool lenient = false);

// Positive class is Biased. A parse failure is an error that is never a
// positive prediction, so it is counted in fn whatever the truth is.
struct Confusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t parse_failures = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const Confusion&) const = default;
};

enum class OfDenominator {
  All,       // fp / all samples
  Unbiased,  // fp / samples whose truth is Unbiased
};

struct Metrics {
  Confusion confusion;
  double accuracy = 0.0;
  double over_fairness = 0.0;

  bool operator==(const Metrics&) const = default;
};

// Throws LengthMismatch, EmptyEval.
Metrics compute_metrics(const std::vector<Prediction>& preds, const std::vector<Verdict>& truths,
                        OfDenominator denominator = OfDenominator::All);

struct Dataset {
  std::string name;
  std::vector<BiasSample> samples;
  bool lenient = false;  // external text may contain unknown words
};

// Parameters of every mode checkpoint for one seed.
using ModelSet = std::map<AblationMode, LmParams>;

struct EvalCell {
  std::string dataset;
  AblationMode mode = AblationMode::Base;
  std::uint64_t seed = 0;
  Metrics metrics;
  std::vector<Prediction> predictions;  // not serialised
};

struct EvalRow {
  std::string dataset;
  AblationMode mode = AblationMode::Base;
  double accuracy = 0.0;       // median over seeds
  double over_fairness = 0.0;  // median over seeds
  std::vector<EvalCell> cells;
};

struct EvalReport {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationMode> modes;
  std::vector<std::string> datasets;
  std::vector<EvalRow> rows;  // dataset-major, then mode order

  const EvalRow& row(const std::string& dataset, AblationMode mode) const;
};

double median(std::vector<double> values);

struct AblationOptions {
  std::vector<AblationMode> modes{std::begin(kAllModes), std::end(kAllModes)};
  std::size_t max_new = 2048;
  OfDenominator denominator = OfDenominator::All;
  std::string config_hash;
};

// Evaluates every (dataset, mode, seed) cell and takes medians over seeds.
// models maps seed -> checkpoints. Throws MissingCheckpoint.
EvalReport run_ablation(const std::map<std::uint64_t, ModelSet>& models, const std::vector<Dataset>& datasets,
                        const SpecDocument& spec, const Vocab& vocab, const AblationOptions& options);

// "73.15 / 8.00" from fractions 0.7315 and 0.08.
std::string format_cell(double accuracy, double over_fairness);

// One JSON object per dataset x mode: medians plus every seed's counts.
std::string report_to_jsonl(const EvalReport& report);
EvalReport report_from_jsonl(const std::string& text);
// Fixed-width table, one row per mode and an "Acc / OF" column per dataset.
std::string render_table(const EvalReport& report);

}  // namespace fairjudge
