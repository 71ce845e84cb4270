// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fairjudge/model.hpp"

namespace fairjudge {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam update in place. Throws NonFiniteGradient before
// touching any state, NonFiniteParameter if the update overflows.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamHyper& hyper = {});
void adam_step(LmParams& params, const Gradients& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

}  // namespace fairjudge
