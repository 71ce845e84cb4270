// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "fairjudge/error.hpp"
#include "fairjudge/model.hpp"
#include "fairjudge/sampling.hpp"
#include "testing.hpp"

namespace fairjudge {
namespace {

using testing::random_params;
using testing::random_seq;
using testing::tiny_config;

TEST(ConfigTest, RejectsInconsistentShapes) {
  LmConfig c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.context_len = 1;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.d_ff = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ModelTest, InitializationIsFiniteAndUniform) {
  const LmConfig c = tiny_config(9);
  const LmParams p = LmParams::initialize(c);
  EXPECT_TRUE(p.all_finite());
  Rng rng(1);
  const auto seq = random_seq(c, rng, 10, 10);
  const Matrix logits = forward_logits(p, seq);
  ASSERT_EQ(logits.rows, 10u);
  for (double z : logits.data) EXPECT_EQ(z, 0.0);
  for (std::size_t t = 0; t < logits.rows; ++t) {
    for (double q : softmax(logits.row(t))) EXPECT_DOUBLE_EQ(q, 1.0 / 9.0);
  }
}

TEST(ModelTest, InitializationIsSeeded) {
  LmConfig c = tiny_config();
  EXPECT_EQ(LmParams::initialize(c), LmParams::initialize(c));
  LmConfig other = c;
  other.seed = c.seed + 1;
  EXPECT_NE(LmParams::initialize(c).values(), LmParams::initialize(other).values());
}

TEST(ModelTest, LogitsAreCausal) {
  const LmConfig c = tiny_config(11, 8, 2);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const LmParams p = random_params(c, 100 + static_cast<std::uint64_t>(trial));
    auto seq = random_seq(c, rng, 12, 12);
    const Matrix base = forward_logits(p, seq);
    const std::size_t t = rng.below(11);
    auto altered = seq;
    for (std::size_t i = t + 1; i < altered.size(); ++i) {
      altered.ids[i] = 4 + static_cast<int>(rng.below(c.vocab_size - 4));
    }
    const Matrix other = forward_logits(p, altered);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t j = 0; j < c.vocab_size; ++j) EXPECT_EQ(base(r, j), other(r, j));
    }
  }
}

TEST(ModelTest, ForwardIsDeterministic) {
  const LmConfig c = tiny_config(11);
  const LmParams p = random_params(c, 8);
  Rng rng(9);
  const auto seq = random_seq(c, rng, 14, 14);
  EXPECT_EQ(forward_logits(p, seq).data, forward_logits(p, seq).data);
}

TEST(ModelTest, SoftmaxRowsAreNormalised) {
  const LmConfig c = tiny_config(13, 8, 2);
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const LmParams p = random_params(c, 50 + static_cast<std::uint64_t>(trial), 1.5);
    const auto seq = random_seq(c, rng, 16, 16);
    const Matrix logits = forward_logits(p, seq);
    for (std::size_t t = 0; t < logits.rows; ++t) {
      const auto q = softmax(logits.row(t));
      EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-9);
    }
  }
  // Large logits stay finite thanks to max subtraction.
  const std::vector<double> big{1000.0, 999.0, -1000.0};
  const auto q = softmax(big, 0.01);
  EXPECT_TRUE(std::isfinite(q[0]));
  EXPECT_NEAR(q[0] + q[1] + q[2], 1.0, 1e-12);
}

TEST(ModelTest, SequenceTooLongIsRejected) {
  const LmConfig c = tiny_config();
  const LmParams p = LmParams::initialize(c);
  Rng rng(2);
  const auto seq = random_seq(c, rng, c.context_len + 1, 4);
  try {
    forward_logits(p, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeqTooLong);
  }
}

TEST(ModelTest, DecodeSessionMatchesFullForward) {
  const LmConfig c = tiny_config(11, 8, 2);
  const LmParams p = random_params(c, 21);
  Rng rng(4);
  const auto seq = random_seq(c, rng, 15, 15);
  const Matrix full = forward_logits(p, seq);
  DecodeSession session(p);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto row = session.step(seq.ids[t]);
    for (std::size_t j = 0; j < c.vocab_size; ++j) EXPECT_EQ(row[j], full(t, j));
  }
}

TEST(LogprobTest, UniformModelSingleToken) {
  const LmConfig c = tiny_config(4);
  const LmParams p = LmParams::initialize(c);
  const TokenSeq seq{{1, 3}, 1};
  EXPECT_NEAR(sequence_logprob(p, seq), std::log(0.25), 1e-12);
  EXPECT_NEAR(sequence_logprob(p, seq), -1.386294, 1e-6);
}

TEST(LogprobTest, UniformModelThreeTokens) {
  const LmConfig c = tiny_config(4);
  const LmParams p = LmParams::initialize(c);
  const TokenSeq seq{{1, 3, 2, 3, 0}, 2};
  EXPECT_NEAR(sequence_logprob(p, seq), 3.0 * std::log(0.25), 1e-12);
  EXPECT_NEAR(sequence_logprob(p, seq), -4.158883, 1e-6);
}

TEST(LogprobTest, ChainRuleOnRandomSequences) {
  const LmConfig c = tiny_config(10, 8, 2);
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const LmParams p = random_params(c, 300 + static_cast<std::uint64_t>(trial));
    const std::size_t len = 4 + rng.below(12);
    const std::size_t boundary = 1 + rng.below(len - 2);
    const std::size_t split = boundary + 1 + rng.below(len - boundary - 1);
    auto whole = random_seq(c, rng, len, boundary);
    TokenSeq first{{whole.ids.begin(), whole.ids.begin() + static_cast<std::ptrdiff_t>(split)}, boundary};
    TokenSeq second{whole.ids, split};
    const double lhs = sequence_logprob(p, whole);
    const double rhs = sequence_logprob(p, first) +
                       (split < len ? sequence_logprob(p, second) : 0.0);
    EXPECT_NEAR(lhs, rhs, 1e-9);
    EXPECT_LE(lhs, 0.0);
  }
}

TEST(LogprobTest, EmptyCompletionIsAnError) {
  const LmConfig c = tiny_config();
  const LmParams p = LmParams::initialize(c);
  try {
    sequence_logprob(p, TokenSeq{{1, 5, 6}, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCompletion);
  }
  EXPECT_THROW(sft_loss(p, TokenSeq{{1, 5}, 2}), Error);
}

TEST(SftLossTest, UniformModelGivesLogVocab) {
  const LmConfig c = tiny_config(50);
  const LmParams p = LmParams::initialize(c);
  Rng rng(6);
  const auto seq = random_seq(c, rng, 12, 5);
  EXPECT_NEAR(sft_loss(p, seq), std::log(50.0), 1e-9);
  EXPECT_NEAR(sft_loss(p, seq), 3.912023, 1e-6);
}

TEST(SftLossTest, PerfectFitGivesZero) {
  const LmConfig c = tiny_config(6);
  LmParams p(c);
  // Final layer norm outputs its bias e_0; column 5 of w_out dominates.
  p.at(p.layout().lnf_b)[0] = 1.0;
  p.at(p.layout().w_out)[5] = 1000.0;
  const TokenSeq seq{{1, 4, 5, 5, 5}, 2};
  EXPECT_EQ(sft_loss(p, seq), 0.0);
}

TEST(SftLossTest, OnlyCompletionPositionsCount) {
  const LmConfig c = tiny_config(9, 8, 2);
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const LmParams p = random_params(c, 70 + static_cast<std::uint64_t>(trial));
    const auto seq = random_seq(c, rng, 13, 6);
    const Matrix logits = forward_logits(p, seq);
    double oracle = 0.0;
    for (std::size_t t = seq.boundary; t < seq.size(); ++t) {
      oracle -= log_softmax(logits.row(t - 1))[static_cast<std::size_t>(seq.ids[t])];
    }
    oracle /= static_cast<double>(seq.completion_size());
    EXPECT_NEAR(sft_loss(p, seq), oracle, 1e-12);
  }
  // Prompt tokens do not contribute terms: under a uniform model any prompt
  // gives the same loss.
  const LmParams uniform = LmParams::initialize(c);
  auto seq = random_seq(c, rng, 13, 6);
  const double before = sft_loss(uniform, seq);
  for (std::size_t i = 1; i < seq.boundary; ++i) seq.ids[i] = 4;
  EXPECT_EQ(sft_loss(uniform, seq), before);
}

TEST(EntropyTest, StrictlyIncreasingInTemperature) {
  Rng rng(15);
  const double taus[] = {0.5, 1.0, 1.2, 2.0};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(8);
    for (double& z : logits) z = rng.normal() * 2.0;
    double prev = -1.0;
    for (double tau : taus) {
      const double h = entropy(logits, tau);
      EXPECT_GT(h, prev);
      prev = h;
    }
  }
  const std::vector<double> flat(5, 0.3);
  EXPECT_NEAR(entropy(flat, 0.5), std::log(5.0), 1e-12);
}

TEST(SamplingTest, UniformLogitsPassChiSquare) {
  Rng rng(77);
  const std::vector<double> logits{0.0, 0.0, 0.0};
  std::array<int, 3> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(sample_token(logits, 1.2, rng))]++;
  double chi2 = 0.0;
  const double expected = draws / 3.0;
  for (int n : counts) chi2 += (n - expected) * (n - expected) / expected;
  // 2 degrees of freedom, p = 0.001 critical value.
  EXPECT_LT(chi2, 13.8155);
}

TEST(SamplingTest, TwoLogitDistributionMatchesClosedForm) {
  const std::vector<double> logits{1.0, 0.0};
  const auto p = softmax(logits, 1.0);
  EXPECT_NEAR(p[0], 0.731059, 1e-6);
  EXPECT_NEAR(p[1], 0.268941, 1e-6);
  Rng rng(78);
  int zeros = 0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) zeros += sample_token(logits, 1.0, rng) == 0;
  const double sd = std::sqrt(p[0] * p[1] / draws);
  EXPECT_NEAR(zeros / static_cast<double>(draws), p[0], 4.0 * sd);
}

TEST(SamplingTest, GreedyPicksArgmax) {
  EXPECT_EQ(greedy_token(std::vector<double>{0.1, 2.0, -1.0, 2.0}), 1);
  EXPECT_EQ(greedy_token(std::vector<double>{0.0, 0.0}), 0);
}

TEST(SamplingTest, CompletionContract) {
  const LmConfig c = tiny_config(9);
  const LmParams p = random_params(c, 31, 1.0);
  const TokenSeq prompt{{1, 5, 6}, 3};
  SamplingOptions o{1.2, false, 8, 2};
  Rng a(5), b(5);
  const auto s1 = sample_completion(p, prompt, o, a);
  const auto s2 = sample_completion(p, prompt, o, b);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == Rng(5));
  EXPECT_EQ(s1.boundary, 3u);
  EXPECT_GE(s1.completion_size(), 1u);
  EXPECT_LE(s1.completion_size(), 8u);
  for (std::size_t i = s1.boundary; i + 1 < s1.size(); ++i) EXPECT_NE(s1.ids[i], o.eos);

  o.max_new = c.context_len;
  EXPECT_THROW(sample_completion(p, prompt, o, a), Error);
}

TEST(SamplingTest, StopsAtEndOfSequence) {
  const LmConfig c = tiny_config(6);
  LmParams p(c);
  p.at(p.layout().lnf_b)[0] = 1.0;
  p.at(p.layout().w_out)[2] = 50.0;  // eos dominates
  Rng rng(1);
  const auto s = sample_completion(p, TokenSeq{{1, 4}, 2}, SamplingOptions{1.0, false, 10, 2}, rng);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.ids.back(), 2);
}

}  // namespace
}  // namespace fairjudge
