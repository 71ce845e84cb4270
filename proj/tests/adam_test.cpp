// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fairjudge/adam.hpp"
#include "fairjudge/error.hpp"
#include "testing.hpp"

namespace fairjudge {
namespace {

// Independent scalar Adam recurrence used as the oracle.
struct ScalarAdam {
  double w, m = 0.0, v = 0.0;
  int t = 0;
  void step(double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w -= lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
};

TEST(AdamTest, ZeroGradientLeavesParamsUnchanged) {
  const LmParams before = testing::random_params(testing::tiny_config(), 5);
  LmParams p = before;
  AdamState state;
  adam_step(p, Gradients(p.config()), state, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamTest, OneStepDescendsOnSquare) {
  std::vector<double> w{1.0};
  AdamState state;
  adam_step(std::span<double>(w), std::vector<double>{2.0 * w[0]}, state, 0.1);
  EXPECT_LT(w[0], 1.0);
  EXPECT_NEAR(w[0], 0.9, 1e-9);  // first bias-corrected step moves by lr
}

TEST(AdamTest, ConvexQuadraticMatchesScalarRecurrenceAndConverges) {
  const double curvature[] = {1.0, 3.0};
  std::vector<double> w{1.0, -2.0};
  ScalarAdam oracle[] = {{1.0}, {-2.0}};
  AdamState state;
  const double lr = 0.01;
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> g{2.0 * curvature[0] * w[0], 2.0 * curvature[1] * w[1]};
    adam_step(std::span<double>(w), g, state, lr);
    for (int i = 0; i < 2; ++i) oracle[i].step(2.0 * curvature[i] * oracle[i].w, lr);
  }
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(w[static_cast<std::size_t>(i)], oracle[i].w, 1e-12);
  const double loss = curvature[0] * w[0] * w[0] + curvature[1] * w[1] * w[1];
  EXPECT_LT(loss, 1e-6);
}

TEST(AdamTest, NonFiniteGradientIsRejectedWithoutSideEffects) {
  std::vector<double> w{1.0, 2.0};
  AdamState state;
  try {
    adam_step(std::span<double>(w), std::vector<double>{0.5, std::numeric_limits<double>::quiet_NaN()},
              state, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
  }
  EXPECT_EQ(w, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(state.step, 0u);
}

}  // namespace
}  // namespace fairjudge
