// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fairjudge/vocab.hpp"

namespace fairjudge {

struct LmConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 48;
  std::size_t n_heads = 4;
  std::size_t d_ff = 96;
  std::size_t context_len = 256;
  std::size_t vocab_size = 0;
  std::uint64_t seed = 1;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ConfigInvalid.
  void validate() const;

  bool operator==(const LmConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct LayerLayout {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

// Offsets of every tensor inside the flat parameter buffer (row-major).
struct ParamLayout {
  std::size_t tok_emb = 0;  // vocab x d_model
  std::size_t pos_emb = 0;  // context_len x d_model
  std::vector<LayerLayout> layers;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;
  std::size_t w_out = 0;  // d_model x vocab
  std::size_t total = 0;
  std::vector<TensorSpec> tensors;

  static ParamLayout build(const LmConfig& config);
};

// Weights of the decoder-only model, stored as one flat buffer so the
// optimizer, checkpoints and gradient checks treat all tensors uniformly.
// The same type carries gradients (see Gradients).
class LmParams {
 public:
  // All tensors zero.
  explicit LmParams(const LmConfig& config);

  // Normal(0, 1/sqrt(d_model)) embeddings and projections, unit layer-norm
  // gains, zero biases and a zero output projection (uniform next-token
  // distribution before training).
  static LmParams initialize(const LmConfig& config);

  const LmConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double* at(std::size_t offset) { return values_.data() + offset; }
  const double* at(std::size_t offset) const { return values_.data() + offset; }

  bool all_finite() const;
  void set_zero();

  bool operator==(const LmParams& other) const {
    return config_ == other.config_ && values_ == other.values_;
  }

 private:
  LmConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
};

using Gradients = LmParams;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

// Row t holds next-token logits given positions 0..t. Throws SeqTooLong.
Matrix forward_logits(const LmParams& params, const TokenSeq& seq);

// Sum over completion positions of log p(id_t | ids[0..t)). Throws
// EmptyCompletion when boundary == size and EmptyPrompt when boundary == 0.
double sequence_logprob(const LmParams& params, const TokenSeq& seq);

// Mean completion-token negative log-likelihood.
double sft_loss(const LmParams& params, const TokenSeq& seq);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits);
// Shannon entropy (nats) of softmax(logits / temperature).
double entropy(std::span<const double> logits, double temperature);

struct Activations;

// Forward pass over one sequence that keeps the activations needed to
// backpropagate d(logprob)/d(params).
class CompletionPass {
 public:
  CompletionPass(const LmParams& params, const TokenSeq& seq);
  ~CompletionPass();
  CompletionPass(CompletionPass&&) noexcept;
  CompletionPass& operator=(CompletionPass&&) noexcept;

  double logprob() const { return logprob_; }
  std::size_t completion_tokens() const { return seq_.completion_size(); }

  // grads += scale * d logprob / d params
  void backward(double scale, Gradients& grads) const;

 private:
  const LmParams* params_;
  TokenSeq seq_;
  std::unique_ptr<Activations> acts_;
  std::vector<double> probs_;  // completion rows x vocab
  double logprob_ = 0.0;
};

// Log-probabilities of many completions at once. The longest prefix common
// to every sequence (and ending before the first completion token) is run
// once forward and once backward; the gradients are exact.
class SharedPrefixPass {
 public:
  SharedPrefixPass(const LmParams& params, std::vector<TokenSeq> seqs);
  ~SharedPrefixPass();

  const std::vector<double>& logprobs() const { return logprobs_; }
  const std::vector<TokenSeq>& seqs() const { return seqs_; }
  std::size_t prefix_length() const;

  // grads += sum_i weights[i] * d logprob_i / d params
  void backward(std::span<const double> weights, Gradients& grads) const;

 private:
  struct Item;
  const LmParams* params_;
  std::vector<TokenSeq> seqs_;
  std::unique_ptr<Activations> prefix_;
  std::vector<std::unique_ptr<Item>> items_;
  std::vector<double> logprobs_;
};

// Incremental decoder with cached keys/values. step() produces the same
// logits row as forward_logits for the same prefix.
class DecodeSession {
 public:
  explicit DecodeSession(const LmParams& params);

  // Feeds one token at the next position, returns logits for the position after it.
  std::vector<double> step(int token);
  std::size_t position() const { return pos_; }

 private:
  const LmParams* params_;
  std::vector<std::vector<double>> keys_;    // per layer, pos x d_model
  std::vector<std::vector<double>> values_;  // per layer, pos x d_model
  std::size_t pos_ = 0;
};

}  // namespace fairjudge
