// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/grad.hpp"

namespace fairjudge {

double SftObjective::evaluate(const LmParams& params, Gradients* grads, double scale) const {
  CompletionPass pass(params, seq_);
  const double n = static_cast<double>(pass.completion_tokens());
  if (grads != nullptr) pass.backward(-scale / n, *grads);
  return -pass.logprob() / n;
}

LossAndGrad backward(const LmParams& params, const Objective& objective) {
  LossAndGrad out{0.0, Gradients(params.config())};
  out.loss = objective.evaluate(params, &out.grads, 1.0);
  return out;
}

}  // namespace fairjudge
