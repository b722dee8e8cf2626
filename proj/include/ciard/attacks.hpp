// SPDX-License-Identifier: Apache-2.0
#pragma once

// L-infinity attacks used both for the inner maximisation during training and
// for evaluation. Every attack returns points inside
//   [x - eps, x + eps] intersected with [0, 1]
// and, for the gradient attacks, the best iterate seen per sample.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ciard/nn.hpp"
#include "ciard/losses.hpp"

namespace ciard {

enum class AttackObjective {
  CeLabel,   // CE(s(x+d), y)
  KlSelf,    // KL(s(x+d) || s(x)), TRADES-style
  KlJoint,   // KL(s(x+d) || t(x+d)) against the clean teacher
  CwMargin,  // min(max_{j!=y} z_j - z_y, kappa)
};

std::string objective_name(AttackObjective o);
AttackObjective parse_objective(const std::string& name);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  int iters = 10;
  AttackObjective objective = AttackObjective::CeLabel;
  bool rand_init = true;
  double kappa = 0.0;
  int query_budget = 100;
  std::uint64_t seed = 0;
  double kl_tau = 1.0;  // temperature of the KL objectives

  void validate() const;

  /// 10 steps of 2/255 inside 8/255, CE objective.
  static AttackConfig training();
  /// 20 steps of 2/255 inside 8/255; CE (SAT) or KL_SELF (TRADES) objective.
  static AttackConfig pgd_sat();
  static AttackConfig pgd_trades();
  /// 30 margin-ascent steps.
  static AttackConfig cw();
  static AttackConfig square();
};

struct AdvBatch {
  Tensor x_adv;
  Tensor x_ref;
  std::vector<double> achieved_objective;
  std::vector<int> queries_used;  // black-box attacks only, per sample
  /// Square attack: objective of the start point followed by every accepted proposal, per sample.
  std::vector<std::vector<double>> accepted_trace;

  int max_queries() const;
};

/// Models reachable by a gradient attack. The clean teacher is needed only for KlJoint.
struct AttackModels {
  const Model* student = nullptr;
  const Model* clean_teacher = nullptr;
};

/// Clamp x_adv into [x_ref - eps, x_ref + eps] and [0, 1].
Tensor project(const Tensor& x_adv, const Tensor& x_ref, double epsilon);

AdvBatch fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double epsilon);
AdvBatch pgd(const AttackModels& models, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
/// PGD ascent on the margin objective; uses cfg.iters (30 by default in AttackConfig::cw()).
AdvBatch cw_linf(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);

/// Per-sample value of cfg.objective at `x_eval`; `x_ref` feeds the KlSelf reference.
std::vector<double> attack_objective(const AttackModels& models, const Tensor& x_eval, const Tensor& x_ref,
                                     std::span<const int> labels, const AttackConfig& cfg);

/// Forward-only access to a model.
using LogitOracle = std::function<Tensor(const Tensor&)>;
LogitOracle make_oracle(const Model& model);

/// Fraction of image area covered by a square after `done` of `budget` proposals (p_init 0.8 schedule).
double square_fraction(int done, int budget, double p_init = 0.8);

/// Random-search attack on the margin loss with square +/-eps updates.
/// Each sample gets its own stream derived from (cfg.seed, sample index).
AdvBatch square_attack(const LogitOracle& oracle, const Shape& sample_shape, const Tensor& x,
                       std::span<const int> labels, const AttackConfig& cfg);

}  // namespace ciard
