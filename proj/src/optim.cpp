// SPDX-License-Identifier: Apache-2.0
#include "ciard/optim.hpp"

#include <cmath>
#include <numbers>

#include "ciard/errors.hpp"

namespace ciard {

namespace {

bool is_weight(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

SgdOptimizer::SgdOptimizer(const Model& model, SgdOptions opts)
    : opts_(opts), velocity_(model.params().zeros_like()) {
  set_lr(opts.lr);
  if (opts.momentum < 0.0 || opts.weight_decay < 0.0) throw ParameterError("momentum and weight decay must be >= 0");
}

void SgdOptimizer::set_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and >= 0");
  opts_.lr = lr;
}

void SgdOptimizer::step(Model& model, const ParamSet& grads) {
  ParamSet& params = model.mutable_params();
  if (!params.same_layout(grads) || !params.same_layout(velocity_)) {
    throw ShapeError("gradient/optimizer layout does not match model parameters");
  }
  const auto mu = static_cast<float>(opts_.momentum);
  const auto wd = static_cast<float>(opts_.weight_decay);
  const auto lr = static_cast<float>(opts_.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value.data();
    auto g = grads[i].value.data();
    auto v = velocity_[i].value.data();
    const float decay = is_weight(params[i].name) ? wd : 0.0f;
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = mu * v[k] + (g[k] + decay * p[k]);
      p[k] -= lr * v[k];
    }
  }
}

double cosine_lr(int epoch, const CosineSchedule& s) {
  if (s.hold < 0 || s.hold >= s.total) throw ParameterError("cosine schedule needs 0 <= hold < total");
  if (epoch < 0 || epoch > s.total) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total) + "]");
  }
  if (epoch < s.hold) return s.lr0;
  const double frac = static_cast<double>(epoch - s.hold) / static_cast<double>(s.total - s.hold);
  return s.lr_min + 0.5 * (s.lr0 - s.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace ciard
