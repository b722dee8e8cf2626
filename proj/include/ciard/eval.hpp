// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ciard/attacks.hpp"
#include "ciard/data.hpp"
#include "ciard/nn.hpp"

namespace ciard {

enum class AttackKind { Fgsm, PgdSat, PgdTrades, Cw, Square };

/// A named evaluation attack: one of the five standard kinds plus its settings.
struct EvalAttack {
  std::string id;
  AttackKind kind = AttackKind::PgdSat;
  AttackConfig cfg;
};

/// Standard evaluation protocol for one of fgsm, pgd_sat, pgd_trades, cw, square.
/// Throws ConfigError for unknown names.
EvalAttack standard_attack(const std::string& name);
const std::vector<std::string>& standard_attack_names();

struct MetricsRecord {
  std::string model_id;
  std::string attack_id;
  double clean_acc = 0.0;   // percent
  double robust_acc = 0.0;  // percent
  std::size_t n_samples = 0;

  double w_robust() const;
};

/// Mean of clean and robust accuracy (percent).
double weighted_robustness(double clean, double robust);
/// Round half away from zero to two decimals.
double round2(double v);

/// 100 * correct / N. Empty datasets and class-count mismatches are ConfigErrors.
double accuracy(const Model& model, const Dataset& ds);
/// Accuracy on inputs produced per batch by the attack; gradients come from `model`.
double robust_accuracy(const Model& model, const Dataset& ds, const EvalAttack& attack);

/// Adversarial inputs for the whole dataset, crafted against `source`.
Tensor craft_adversarial(const Model& source, const Dataset& ds, const EvalAttack& attack);

MetricsRecord evaluate_attack(const std::string& model_id, const Model& model, const Dataset& ds,
                              const EvalAttack& attack);

/// Examples crafted with gradient access to `surrogate`, scored on `target`.
MetricsRecord transfer_eval(const Model& surrogate, const Model& target, const Dataset& ds, const EvalAttack& attack,
                            const std::string& target_id = "target");

/// CSV with columns model,attack,clean,robust,w_robust,n_samples (2-decimal fixed).
std::string records_to_csv(std::vector<MetricsRecord> records);
/// Parses the CSV schema above; rejects rows whose w_robust disagrees with the recomputed mean by > 0.01.
std::vector<MetricsRecord> records_from_csv(const std::string& text);
/// Aligned markdown table: Attack | Defense | Clean | Robust | W-Robust.
std::string records_to_markdown(std::vector<MetricsRecord> records);

/// Deterministic order: standard attack order, then attack id, then model id.
void sort_records(std::vector<MetricsRecord>& records);

}  // namespace ciard
