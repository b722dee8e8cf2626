// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ciard/attacks.hpp"
#include "ciard/data.hpp"
#include "ciard/losses.hpp"
#include "ciard/nn.hpp"
#include "ciard/optim.hpp"

namespace ciard {

enum class RobustMode { Sat, Trades };
RobustMode parse_robust_mode(const std::string& name);

struct PretrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  double lr0 = 0.1;
  double lr_min = 1e-5;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  AttackConfig attack = AttackConfig::training();  // robust teachers only
  double trades_beta = 6.0;
  bool use_augment = true;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainLog {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;  // percent, on the (possibly adversarial) training inputs
  double lr = 0.0;
};

struct PretrainResult {
  Model model;
  std::vector<PretrainLog> logs;
};

PretrainResult pretrain_clean_teacher(const ModelSpec& spec, const Dataset& ds, const PretrainConfig& cfg);
/// SAT trains on PGD examples; TRADES minimises CE(f(x), y) + beta * KL(f(x*) || f(x)).
PretrainResult pretrain_robust_teacher(const ModelSpec& spec, const Dataset& ds, const PretrainConfig& cfg,
                                       RobustMode mode);

struct TrainConfig {
  int epochs = 300;
  int freeze_epochs = 50;
  std::size_t batch_size = 64;
  double lr0 = 0.1;
  double lr_min = 1e-5;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  double teacher_lr = 1e-5;
  double teacher_momentum = 0.0;
  double teacher_weight_decay = 2e-4;
  LossWeights weights;
  AttackConfig train_attack = AttackConfig::training();
  bool enable_push = true;
  bool enable_itt = true;
  /// Replace the batch-1 normalisers with the epoch-1 means once epoch 1 ends.
  bool normalizer_epoch_mean = false;
  bool use_augment = true;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  /// Student checkpoint rewritten after every completed epoch.
  std::optional<std::filesystem::path> last_good_path;

  /// 60 epochs with a 10 epoch freeze (the 1:6 ratio of the full schedule), distillation at tau 4.
  static TrainConfig desk();
  void validate() const;
  CosineSchedule schedule() const;
};

struct EpochLog {
  int epoch = 0;
  double l_nat = 0.0;
  double l_adv = 0.0;
  double l_push = 0.0;
  double l_student = 0.0;
  double l_adv_teacher = 0.0;
  double w_nat = 0.0;
  double w_adv = 0.0;
  double lr = 0.0;
  bool teacher_updated = false;
  double wall_time = 0.0;  // seconds; not written to CSV logs
};

struct BatchRecord {
  int epoch = 0;
  std::size_t batch = 0;
  LossComponents components;
  LossWeights weights;  // after this batch's adaptive update
  double lambda_effective = 0.0;
  double max_linf = 0.0;  // largest |x* - x| in the batch
  bool in_unit_box = true;
};

struct TrainObserver {
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(const EpochLog&, const Model& student, const Model& robust_teacher)> on_epoch;
};

struct CiardResult {
  Model student;
  Model robust_teacher;
  std::vector<EpochLog> logs;
};

/// Cyclic dual-teacher distillation. The clean teacher is never updated; the
/// robust teacher is retrained on the student's adversarial examples once
/// `freeze_epochs` have passed (when enable_itt).
CiardResult ciard_train(const ModelSpec& student_spec, const Model& clean_teacher, Model robust_teacher,
                        const Dataset& ds, const TrainConfig& cfg, const TrainObserver& observer = {});

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path);
void write_pretrain_log_csv(const std::vector<PretrainLog>& logs, const std::filesystem::path& path);

}  // namespace ciard
