// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "fairjudge/grad.hpp"
#include "testing.hpp"

namespace fairjudge {
namespace {

using testing::finite_difference;
using testing::max_relative_error;
using testing::random_params;
using testing::random_seq;
using testing::tiny_config;

TEST(GradTest, SftGradientMatchesFiniteDifferences) {
  const LmConfig c = tiny_config(7, 8, 1);
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const LmParams p = random_params(c, 900 + static_cast<std::uint64_t>(trial));
    const std::size_t len = 6 + rng.below(6);
    const auto seq = random_seq(c, rng, len, 1 + rng.below(len - 2));
    const auto analytic = backward(p, SftObjective(seq));
    const auto numeric = finite_difference(p, [&](const LmParams& q) { return sft_loss(q, seq); });
    EXPECT_NEAR(analytic.loss, sft_loss(p, seq), 1e-12);
    EXPECT_LT(max_relative_error(analytic.grads.values(), numeric), 1e-4) << "trial " << trial;
  }
}

TEST(GradTest, TwoLayerGradientMatchesFiniteDifferences) {
  const LmConfig c = tiny_config(6, 8, 2);
  Rng rng(7);
  const LmParams p = random_params(c, 4);
  const auto seq = random_seq(c, rng, 9, 3);
  const auto analytic = backward(p, SftObjective(seq));
  const auto numeric = finite_difference(p, [&](const LmParams& q) { return sft_loss(q, seq); });
  EXPECT_LT(max_relative_error(analytic.grads.values(), numeric), 1e-4);
}

TEST(GradTest, ConstantLossHasZeroGradient) {
  const LmParams p = random_params(tiny_config(), 1);
  const auto out = backward(p, ConstantObjective(3.5));
  EXPECT_EQ(out.loss, 3.5);
  for (double g : out.grads.values()) EXPECT_EQ(g, 0.0);
}

TEST(GradTest, GradientIsLinearInLossScale) {
  const LmConfig c = tiny_config();
  const LmParams p = random_params(c, 2);
  Rng rng(3);
  const SftObjective base(random_seq(c, rng, 10, 4));
  const auto g1 = backward(p, base);
  const auto g2 = backward(p, ScaledObjective(base, 2.0));
  EXPECT_NEAR(g2.loss, 2.0 * g1.loss, 1e-12);
  for (std::size_t i = 0; i < g1.grads.values().size(); ++i) {
    EXPECT_NEAR(g2.grads.values()[i], 2.0 * g1.grads.values()[i], 1e-12);
  }
}

// Several completions behind a common prompt, plus one with a different prompt.
std::vector<TokenSeq> prefix_family(const LmConfig& c, Rng& rng) {
  const TokenSeq head = random_seq(c, rng, 6, 6);
  std::vector<TokenSeq> out;
  for (int i = 0; i < 4; ++i) {
    TokenSeq s = head;
    const std::size_t extra = rng.below(3);
    for (std::size_t j = 0; j < extra; ++j) s.ids.push_back(4 + static_cast<int>(rng.below(c.vocab_size - 4)));
    s.boundary = s.ids.size();
    const std::size_t n = 1 + rng.below(4);
    for (std::size_t j = 0; j < n; ++j) s.ids.push_back(4 + static_cast<int>(rng.below(c.vocab_size - 4)));
    out.push_back(std::move(s));
  }
  return out;
}

TEST(SharedPrefixTest, MatchesIndependentPasses) {
  const LmConfig c = tiny_config(9, 8, 2);
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const LmParams p = random_params(c, 50 + static_cast<std::uint64_t>(trial));
    auto seqs = prefix_family(c, rng);
    if (trial == 4) seqs.push_back(random_seq(c, rng, 8, 3));
    std::vector<double> w;
    for (std::size_t i = 0; i < seqs.size(); ++i) w.push_back(rng.normal());

    const SharedPrefixPass shared(p, seqs);
    if (trial < 4) EXPECT_EQ(shared.prefix_length(), 5u);
    if (trial == 4) EXPECT_LE(shared.prefix_length(), 2u);
    Gradients g_shared(c);
    shared.backward(w, g_shared);

    Gradients g_ref(c);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const CompletionPass pass(p, seqs[i]);
      EXPECT_NEAR(shared.logprobs()[i], pass.logprob(), 1e-12);
      pass.backward(w[i], g_ref);
    }
    EXPECT_LT(max_relative_error(g_shared.values(), g_ref.values(), 1e-9), 1e-9);
  }
}

TEST(SharedPrefixTest, GradientMatchesFiniteDifferences) {
  const LmConfig c = tiny_config(7, 8, 1);
  Rng rng(5);
  const LmParams p = random_params(c, 8);
  const auto seqs = prefix_family(c, rng);
  const std::vector<double> w = {0.5, -1.0, 2.0, 0.25};
  auto objective = [&](const LmParams& q) {
    const SharedPrefixPass pass(q, seqs);
    double v = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) v += w[i] * pass.logprobs()[i];
    return v;
  };
  Gradients g(c);
  SharedPrefixPass(p, seqs).backward(w, g);
  EXPECT_LT(max_relative_error(g.values(), finite_difference(p, objective)), 1e-4);
}

}  // namespace
}  // namespace fairjudge
