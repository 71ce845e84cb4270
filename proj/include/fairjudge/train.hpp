// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairjudge/adam.hpp"
#include "fairjudge/fairspec.hpp"
#include "fairjudge/grad.hpp"
#include "fairjudge/model.hpp"
#include "fairjudge/rng.hpp"
#include "fairjudge/sampling.hpp"
#include "fairjudge/taskgen.hpp"

namespace fairjudge {

struct TrainConfig {
  std::size_t k = 4;           // teacher traces per training sample
  std::size_t n_samples = 8;   // on-policy completions per prompt
  double tau = 1.2;            // sampling temperature
  std::size_t max_new = 2048;  // clamped to what the context leaves after the prompt
  double beta = 0.1;
  double noise_rate = 0.2;     // teacher corruption rate before filtering

  // Stage 1 and instruction tuning.
  double lr = 3e-3;
  std::size_t epochs = 12;
  std::size_t batch_size = 8;

  double dpo_lr = 1e-4;
  std::size_t dpo_epochs = 2;
  std::size_t dpo_batch_size = 8;
  std::size_t pair_cap = 4;
  // Keep as many pairs whose winner says "biased" as pairs whose winner says
  // "unbiased", so preference training cannot move the verdict prior.
  bool balance_pairs = true;
  PromptMode stage2_prompt = PromptMode::WithSpec;
  // Learning rate falls linearly to zero over each stage's steps.
  bool linear_decay = true;

  std::uint64_t seed = 1;

  // Throws ConfigInvalid.
  void validate() const;
};

struct SftExample {
  TokenSeq seq;  // prompt | completion <eos>
  Verdict y_star = Verdict::Unbiased;
  std::size_t sample_index = 0;
};

// Up to k filtered teacher traces per sample, prompted WithSpec. Teacher
// draws for sample i come from Rng::stream(cfg.seed, i).
std::vector<SftExample> build_sft_examples(const std::vector<BiasSample>& train, const SpecDocument& spec,
                                           const TemplateTable& table, const Vocab& vocab,
                                           std::size_t context_len, const TrainConfig& cfg);

// One example per sample whose completion is only "Final Answer: <y*>".
std::vector<SftExample> build_instruction_examples(const std::vector<BiasSample>& train,
                                                   const SpecDocument& spec, const Vocab& vocab,
                                                   std::size_t context_len);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> margin;  // mean beta * delta, preference stage only

  bool operator==(const EpochLog&) const = default;
};

struct StageResult {
  LmParams params;
  AdamState optimizer;
  std::vector<EpochLog> log;
  std::string rng_state;
};

// Mean sft_loss over the examples, evaluated in shared-prefix batches.
double mean_sft_loss(const LmParams& params, const std::vector<SftExample>& examples,
                     std::size_t batch_size);

// Minibatch Adam on the mean per-example sft_loss. The log holds the exact
// loss at the start (epoch 0) and the running mean over each epoch after.
StageResult fit_sft(const LmParams& base, const std::vector<SftExample>& examples, double lr,
                    std::size_t epochs, std::size_t batch_size, std::uint64_t seed, bool linear_decay = false);

// lr * (1 - step / total_steps) when decaying, lr otherwise.
double scheduled_lr(double lr, std::size_t step, std::size_t total_steps, bool linear_decay);

StageResult run_stage1(const LmParams& base, const std::vector<BiasSample>& train, const SpecDocument& spec,
                       const TemplateTable& table, const Vocab& vocab, const TrainConfig& cfg);

StageResult run_instruction_tuning(const LmParams& base, const std::vector<BiasSample>& train,
                                   const SpecDocument& spec, const Vocab& vocab, const TrainConfig& cfg);

struct Rollout {
  TokenSeq seq;
  ReasoningTrace trace;
};

// cfg.n_samples completions at temperature cfg.tau, each parsed; parse
// failures are returned like any other rollout.
std::vector<Rollout> sample_on_policy(const PrefixDecoder& decoder, const TokenSeq& prompt, const Vocab& vocab,
                                      const TrainConfig& cfg, Rng& rng);
std::vector<Rollout> sample_on_policy(const LmParams& policy, const TokenSeq& prompt, const Vocab& vocab,
                                      const TrainConfig& cfg, Rng& rng);

// (winner, loser) index pairs: traces with verdict == y_star against the
// rest, min(|W|, |L|, cap) of them, matched at random without replacement.
std::vector<std::pair<std::size_t, std::size_t>> pair_preferences(const std::vector<ReasoningTrace>& traces,
                                                                  Verdict y_star, std::size_t cap, Rng& rng);

struct PreferencePair {
  std::size_t prompt_index = 0;
  TokenSeq winner;  // shares its prompt region with loser
  TokenSeq loser;
  Prediction y_w;
  Prediction y_l;
  double ref_lp_w = 0.0;
  double ref_lp_l = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

struct PairStats {
  std::size_t prompts = 0;
  std::size_t prompts_with_pairs = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t parse_failures = 0;
  std::size_t dropped_for_balance = 0;
};

struct PairSet {
  std::vector<PreferencePair> pairs;
  PairStats stats;
};

// Samples every training prompt once from the reference policy and caches
// the reference log-probabilities of each pair. Prompt i uses its own
// stream, so the result does not depend on iteration order.
PairSet build_pairs(const LmParams& reference, const std::vector<BiasSample>& train, const SpecDocument& spec,
                    const Vocab& vocab, const TrainConfig& cfg);

// Drops a seeded random subset of the larger winner-verdict class so both
// classes are equally represented; survivors keep their order. Returns the
// number dropped.
std::size_t balance_by_winner(std::vector<PreferencePair>& pairs, std::uint64_t seed);

// softplus(-beta * delta), stable for large |beta * delta|.
double dpo_loss_from_margin(double delta, double beta);
double softplus(double z);

// Policy log-ratio margin (lp(w) - ref_w) - (lp(l) - ref_l).
double dpo_margin(const LmParams& theta, const PreferencePair& pair);
double dpo_loss(const LmParams& theta, const PreferencePair& pair, double beta);

// Mean dpo_loss over a set of pairs.
class DpoObjective : public Objective {
 public:
  DpoObjective(std::vector<PreferencePair> pairs, double beta);
  double evaluate(const LmParams& params, Gradients* grads, double scale) const override;

 private:
  std::vector<PreferencePair> pairs_;
  double beta_;
};

struct DpoStats {
  double loss = 0.0;
  double margin = 0.0;  // mean beta * delta
};

DpoStats dpo_stats(const LmParams& theta, const std::vector<PreferencePair>& pairs, double beta,
                   std::size_t batch_size);

// Adam on the mean dpo_loss. The log holds exact loss and margin over all
// pairs at epoch 0 and after every epoch. Throws NoPairsFound when empty.
StageResult fit_dpo(const LmParams& reference, const std::vector<PreferencePair>& pairs, const TrainConfig& cfg);

// One JSON object per pair: prompt, winner and loser text, token ids,
// verdicts and the cached reference log-probabilities.
std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs, const Vocab& vocab,
                           const std::string& config_hash);
// Throws SchemaError(line).
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

std::string log_to_jsonl(const std::vector<EpochLog>& log, const std::string& stage, const std::string& config_hash);

}  // namespace fairjudge
