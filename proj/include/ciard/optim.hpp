// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ciard/nn.hpp"

namespace ciard {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
};

/// SGD with heavy-ball momentum. Weight decay is folded into the gradient
/// before the momentum update and applies to `*.weight` tensors only:
///   v <- mu * v + (g + wd * p);  p <- p - lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(const Model& model, SgdOptions opts);

  void set_lr(double lr);
  double lr() const noexcept { return opts_.lr; }
  const SgdOptions& options() const noexcept { return opts_; }
  const ParamSet& momentum_buffers() const noexcept { return velocity_; }

  /// Throws FrozenModelError before touching any state when `model` is frozen.
  void step(Model& model, const ParamSet& grads);

 private:
  SgdOptions opts_;
  ParamSet velocity_;
};

struct CosineSchedule {
  int total = 300;
  int hold = 50;
  double lr0 = 0.1;
  double lr_min = 1e-5;
};

/// lr0 while epoch < hold, then half-cosine decay reaching lr_min at `total`.
double cosine_lr(int epoch, const CosineSchedule& schedule = {});

}  // namespace ciard
