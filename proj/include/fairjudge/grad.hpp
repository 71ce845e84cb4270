// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fairjudge/model.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {

// Scalar training objective with an analytic gradient.
class Objective {
 public:
  virtual ~Objective() = default;
  // Returns the loss; when grads is non-null adds scale * dloss/dparams to it.
  virtual double evaluate(const LmParams& params, Gradients* grads, double scale) const = 0;
};

class SftObjective : public Objective {
 public:
  explicit SftObjective(TokenSeq seq) : seq_(std::move(seq)) {}
  double evaluate(const LmParams& params, Gradients* grads, double scale) const override;

 private:
  TokenSeq seq_;
};

// Loss that ignores the parameters.
class ConstantObjective : public Objective {
 public:
  explicit ConstantObjective(double value) : value_(value) {}
  double evaluate(const LmParams&, Gradients*, double) const override { return value_; }

 private:
  double value_;
};

// alpha * inner
class ScaledObjective : public Objective {
 public:
  ScaledObjective(const Objective& inner, double alpha) : inner_(inner), alpha_(alpha) {}
  double evaluate(const LmParams& params, Gradients* grads, double scale) const override {
    return alpha_ * inner_.evaluate(params, grads, scale * alpha_);
  }

 private:
  const Objective& inner_;
  double alpha_;
};

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

// Exact reverse-mode gradient of objective at params.
LossAndGrad backward(const LmParams& params, const Objective& objective);

}  // namespace fairjudge
