// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/sampling.hpp"

#include <algorithm>

#include "fairjudge/error.hpp"

namespace fairjudge {

int sample_token(std::span<const double> logits, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::ConfigInvalid, "temperature must be > 0");
  const auto p = softmax(logits, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  // u landed in the rounding gap above the final cumulative sum.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

std::size_t effective_max_new(std::size_t requested, std::size_t prompt_len, std::size_t context_len) {
  return prompt_len >= context_len ? 0 : std::min(requested, context_len - prompt_len);
}

int greedy_token(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

namespace {

void check_options(const LmParams& params, const TokenSeq& prompt, const SamplingOptions& o) {
  if (o.max_new < 1) throw Error(ErrorCode::ConfigInvalid, "max_new must be >= 1");
  if (!o.greedy && !(o.temperature > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "temperature must be > 0");
  }
  if (prompt.size() == 0) throw Error(ErrorCode::EmptyPrompt, "sampling needs a prompt");
  if (prompt.size() + o.max_new > params.config().context_len) {
    throw Error(ErrorCode::SeqTooLong,
                "prompt " + std::to_string(prompt.size()) + " + max_new " +
                    std::to_string(o.max_new) + " exceeds context " +
                    std::to_string(params.config().context_len));
  }
}

TokenSeq continue_from(DecodeSession session, std::vector<double> logits, const TokenSeq& prompt,
                       const SamplingOptions& o, Rng& rng) {
  TokenSeq out;
  out.ids = prompt.ids;
  out.boundary = prompt.size();
  for (std::size_t n = 0; n < o.max_new; ++n) {
    const int tok = o.greedy ? greedy_token(logits) : sample_token(logits, o.temperature, rng);
    out.ids.push_back(tok);
    if (tok == o.eos || n + 1 == o.max_new) break;
    logits = session.step(tok);
  }
  return out;
}

}  // namespace

TokenSeq sample_completion(const LmParams& params, const TokenSeq& prompt,
                           const SamplingOptions& options, Rng& rng) {
  return sample_completions(params, prompt, options, 1, rng).front();
}

std::vector<TokenSeq> sample_completions(const LmParams& params, const TokenSeq& prompt,
                                         const SamplingOptions& options, std::size_t n,
                                         Rng& rng) {
  return PrefixDecoder(params, {}).sample(prompt, options, n, rng);
}

PrefixDecoder::PrefixDecoder(const LmParams& params, std::vector<int> prefix)
    : params_(&params), prefix_(std::move(prefix)), session_(params) {
  if (prefix_.size() > params.config().context_len) {
    throw Error(ErrorCode::SeqTooLong, "prefix exceeds context");
  }
  for (int id : prefix_) logits_ = session_.step(id);
}

std::vector<TokenSeq> PrefixDecoder::sample(const TokenSeq& prompt, const SamplingOptions& options,
                                            std::size_t n, Rng& rng) const {
  check_options(*params_, prompt, options);
  const bool shared = !prefix_.empty() && prefix_.size() <= prompt.size() &&
                      std::equal(prefix_.begin(), prefix_.end(), prompt.ids.begin());
  DecodeSession session = shared ? session_ : DecodeSession(*params_);
  std::vector<double> logits = shared ? logits_ : std::vector<double>{};
  for (std::size_t i = shared ? prefix_.size() : 0; i < prompt.size(); ++i) logits = session.step(prompt.ids[i]);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(continue_from(session, logits, prompt, options, rng));
  return out;
}

std::vector<int> common_prompt_prefix(const std::vector<TokenSeq>& prompts) {
  if (prompts.empty()) return {};
  std::size_t len = prompts.front().boundary;
  for (const auto& p : prompts) {
    len = std::min(len, p.boundary);
    std::size_t i = 0;
    while (i < len && p.ids[i] == prompts.front().ids[i]) ++i;
    len = i;
  }
  const std::size_t shortest = std::min_element(prompts.begin(), prompts.end(), [](const auto& a, const auto& b) {
                                 return a.boundary < b.boundary;
                               })->boundary;
  if (shortest > 0) len = std::min(len, shortest - 1);
  return {prompts.front().ids.begin(), prompts.front().ids.begin() + static_cast<std::ptrdiff_t>(len)};
}

}  // namespace fairjudge
