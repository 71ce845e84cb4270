// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/adam.hpp"

#include <cmath>

#include "fairjudge/error.hpp"

namespace fairjudge {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamHyper& hyper) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw Error(ErrorCode::ShapeMismatch, "gradient size differs from params");
  if (state.m.empty() && state.v.empty() && state.step == 0) state = AdamState::zeros(n);
  if (state.m.size() != n || state.v.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state size differs from params");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::NonFiniteGradient, "gradient coordinate " + std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  bool finite = true;
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    finite = finite && std::isfinite(params[i]);
  }
  if (!finite) throw Error(ErrorCode::NonFiniteParameter, "parameter overflow after Adam step");
}

void adam_step(LmParams& params, const Gradients& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  if (!(params.config() == grads.config())) {
    throw Error(ErrorCode::ShapeMismatch, "gradient/param config differ");
  }
  adam_step(std::span<double>(params.values()), std::span<const double>(grads.values()), state, lr,
            hyper);
}

}  // namespace fairjudge
