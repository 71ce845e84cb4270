// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fairjudge/model.hpp"
#include "fairjudge/rng.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {

struct SamplingOptions {
  double temperature = 1.0;
  // Argmax decoding; the temperature -> 0 limit without dividing by zero.
  bool greedy = false;
  std::size_t max_new = 1;
  int eos = 2;
};

// Completion budget left after a prompt: min(requested, context - prompt).
std::size_t effective_max_new(std::size_t requested, std::size_t prompt_len, std::size_t context_len);

// Draws from softmax(logits / temperature) by inverse CDF on one uniform.
int sample_token(std::span<const double> logits, double temperature, Rng& rng);
// Lowest index among the maximal logits.
int greedy_token(std::span<const double> logits);

// Appends tokens until eos (kept in the output) or max_new tokens. The
// result has boundary == prompt.size(). Throws SeqTooLong when
// prompt.size() + max_new exceeds the context.
TokenSeq sample_completion(const LmParams& params, const TokenSeq& prompt,
                           const SamplingOptions& options, Rng& rng);

// n independent completions sharing one prefill of the prompt.
std::vector<TokenSeq> sample_completions(const LmParams& params, const TokenSeq& prompt,
                                         const SamplingOptions& options, std::size_t n, Rng& rng);

// Decoder primed once on a prefix shared by many prompts (the rendered
// specification, say). Prompts that start with the prefix skip those
// positions; others are prefilled from scratch. Outputs are identical to
// sample_completions either way.
class PrefixDecoder {
 public:
  PrefixDecoder(const LmParams& params, std::vector<int> prefix);

  std::vector<TokenSeq> sample(const TokenSeq& prompt, const SamplingOptions& options, std::size_t n,
                               Rng& rng) const;
  std::size_t prefix_length() const { return prefix_.size(); }
  std::size_t context_len() const { return params_->config().context_len; }

 private:
  const LmParams* params_;
  std::vector<int> prefix_;
  DecodeSession session_;
  std::vector<double> logits_;
};

// Longest prefix shared by every prompt region, kept one token short of the
// shortest prompt.
std::vector<int> common_prompt_prefix(const std::vector<TokenSeq>& prompts);

}  // namespace fairjudge
