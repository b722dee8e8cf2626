// SPDX-License-Identifier: Apache-2.0
#include "ciard/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ciard/checkpoint.hpp"
#include "ciard/errors.hpp"
#include "ciard/rng.hpp"

namespace ciard {

namespace {

// Seed streams; keep them distinct so that components never share a sequence.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAttackStream = 3;
constexpr std::uint64_t kAugmentStream = 4;

std::uint64_t batch_seed(std::uint64_t seed, std::uint64_t stream, int epoch, std::size_t batch) {
  return derive_seed(derive_seed(derive_seed(seed, stream), static_cast<std::uint64_t>(epoch)), batch);
}

void check_dataset(const ModelSpec& spec, const Dataset& ds) {
  ds.validate();
  if (ds.size() == 0) throw ConfigError("training dataset is empty");
  if (ds.sample_shape() != spec.input_shape) {
    throw ConfigError("dataset sample shape " + shape_to_string(ds.sample_shape()) + " does not match model input " +
                      shape_to_string(spec.input_shape));
  }
  if (ds.num_classes != spec.num_classes) throw ConfigError("dataset class count does not match model");
}

Tensor prepare_batch(const Batch& b, bool use_augment, const AugmentConfig& aug, std::uint64_t seed, int epoch,
                     std::size_t index) {
  if (!use_augment) return b.x;
  AugmentConfig a = aug;
  a.seed = derive_seed(seed, kAugmentStream);
  return augment(b.x, a, static_cast<std::uint64_t>(epoch), index);
}

Tensor attack_batch(const AttackModels& models, const Tensor& x, const Labels& y, AttackConfig cfg,
                    std::uint64_t seed) {
  if (cfg.iters == 0 || cfg.epsilon == 0.0) return x;
  cfg.seed = seed;
  return pgd(models, x, y, cfg).x_adv;
}

int count_correct(const Tensor& logits, const Labels& y) {
  const auto pred = argmax_rows(logits);
  int c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == y[i] ? 1 : 0;
  return c;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

PretrainResult pretrain(const ModelSpec& spec, const Dataset& ds, const PretrainConfig& cfg,
                        std::optional<RobustMode> mode) {
  cfg.validate();
  check_dataset(spec, ds);
  Model model = Model::init(spec, derive_seed(cfg.seed, kInitStream));
  model.set_seed(cfg.seed);
  std::string role = !mode ? "clean" : (*mode == RobustMode::Sat ? "robust-sat" : "robust-trades");
  model.set_lineage("pretrain role=" + role + " seed=" + std::to_string(cfg.seed) +
                    " epochs=" + std::to_string(cfg.epochs));
  SgdOptimizer opt(model, {cfg.lr0, cfg.momentum, cfg.weight_decay});
  const CosineSchedule sched{cfg.epochs, 0, cfg.lr0, cfg.lr_min};

  PretrainResult out;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, sched);
    opt.set_lr(lr);
    BatchIterator it(ds, cfg.batch_size, true, batch_seed(cfg.seed, kShuffleStream, epoch, 0));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int correct = 0;
    for (std::size_t bi = 0; !it.done(); ++bi) {
      const Batch b = it.next();
      try {
        const Tensor x = prepare_batch(b, cfg.use_augment, cfg.augment, cfg.seed, epoch, bi);
        const std::uint64_t aseed = batch_seed(cfg.seed, kAttackStream, epoch, bi);
        double loss = 0.0;
        ParamSet grads;
        if (!mode) {
          ForwardTape tape = forward_with_tape(model, x);
          LossGrad ce = cross_entropy_grad(tape.logits, b.y);
          loss = ce.value;
          correct += count_correct(tape.logits, b.y);
          grads = backward(model, tape, ce.d_first).param_grads;
        } else if (*mode == RobustMode::Sat) {
          const Tensor xa = attack_batch({&model, nullptr}, x, b.y, cfg.attack, aseed);
          ForwardTape tape = forward_with_tape(model, xa);
          LossGrad ce = cross_entropy_grad(tape.logits, b.y);
          loss = ce.value;
          correct += count_correct(tape.logits, b.y);
          grads = backward(model, tape, ce.d_first).param_grads;
        } else {
          AttackConfig ac = cfg.attack;
          ac.objective = AttackObjective::KlSelf;
          const Tensor xa = attack_batch({&model, nullptr}, x, b.y, ac, aseed);
          ForwardTape clean = forward_with_tape(model, x);
          ForwardTape adv = forward_with_tape(model, xa);
          LossGrad ce = cross_entropy_grad(clean.logits, b.y);
          LossGrad kl = softened_kl_grad(adv.logits, clean.logits, 1.0, false);
          loss = ce.value + cfg.trades_beta * kl.value;
          correct += count_correct(clean.logits, b.y);
          Tensor d_clean = ce.d_first;
          for (std::size_t i = 0; i < d_clean.numel(); ++i) {
            d_clean[i] += static_cast<float>(cfg.trades_beta * kl.d_second[i]);
          }
          Tensor d_adv = kl.d_first;
          for (auto& v : d_adv.data()) v = static_cast<float>(cfg.trades_beta * v);
          grads = backward(model, clean, d_clean).param_grads;
          grads += backward(model, adv, d_adv).param_grads;
        }
        if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
        opt.step(model, grads);
        loss_sum += loss * static_cast<double>(b.y.size());
        seen += b.y.size();
      } catch (const NumericError& e) {
        throw TrainingError(std::string("teacher pretraining diverged: ") + e.what(), epoch);
      }
    }
    out.logs.push_back({epoch, loss_sum / static_cast<double>(seen), 100.0 * correct / static_cast<double>(seen), lr});
  }
  out.model = std::move(model);
  return out;
}

}  // namespace

RobustMode parse_robust_mode(const std::string& name) {
  if (name == "sat") return RobustMode::Sat;
  if (name == "trades") return RobustMode::Trades;
  throw ConfigError("unknown robust training mode '" + name + "'");
}

void PretrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr0 > 0.0) || !(lr_min >= 0.0)) throw ConfigError("learning rates must be positive");
  if (!(trades_beta >= 0.0)) throw ConfigError("trades_beta must be >= 0");
  attack.validate();
  augment.validate();
}

PretrainResult pretrain_clean_teacher(const ModelSpec& spec, const Dataset& ds, const PretrainConfig& cfg) {
  return pretrain(spec, ds, cfg, std::nullopt);
}

PretrainResult pretrain_robust_teacher(const ModelSpec& spec, const Dataset& ds, const PretrainConfig& cfg,
                                       RobustMode mode) {
  return pretrain(spec, ds, cfg, mode);
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 60;
  c.freeze_epochs = 10;
  // At tau 1 the push term outweighs distillation on two-moons and the student collapses.
  c.weights.tau_distill = 4.0;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (freeze_epochs < 0 || freeze_epochs >= epochs) throw ConfigError("freeze_epochs must lie in [0, epochs)");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr0 > 0.0) || !(lr_min >= 0.0)) throw ConfigError("learning rates must be positive");
  if (enable_itt && !(teacher_lr > 0.0)) throw ConfigError("teacher_lr must be > 0 when iterative teacher training is on");
  weights.validate();
  train_attack.validate();
  augment.validate();
}

CosineSchedule TrainConfig::schedule() const { return {epochs, freeze_epochs, lr0, lr_min}; }

CiardResult ciard_train(const ModelSpec& student_spec, const Model& clean_teacher, Model robust_teacher,
                        const Dataset& ds, const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  check_dataset(student_spec, ds);
  if (clean_teacher.spec().num_classes != student_spec.num_classes ||
      robust_teacher.spec().num_classes != student_spec.num_classes) {
    throw ConfigError("teacher and student class counts differ");
  }
  if (clean_teacher.spec().input_shape != student_spec.input_shape ||
      robust_teacher.spec().input_shape != student_spec.input_shape) {
    throw ConfigError("teacher and student input shapes differ");
  }

  Model student = Model::init(student_spec, derive_seed(cfg.seed, kInitStream));
  student.set_seed(cfg.seed);
  student.set_lineage("ciard seed=" + std::to_string(cfg.seed) + " epochs=" + std::to_string(cfg.epochs) +
                      " freeze=" + std::to_string(cfg.freeze_epochs) + " push=" + (cfg.enable_push ? "1" : "0") +
                      " itt=" + (cfg.enable_itt ? "1" : "0") + " attack=" + objective_name(cfg.train_attack.objective));
  SgdOptimizer opt(student, {cfg.lr0, cfg.momentum, cfg.weight_decay});
  SgdOptimizer teacher_opt(robust_teacher, {cfg.teacher_lr, cfg.teacher_momentum, cfg.teacher_weight_decay});
  const CosineSchedule sched = cfg.schedule();

  LossWeights weights = cfg.weights;
  weights.l_nat_init.reset();
  weights.l_adv_init.reset();
  double epoch1_nat_sum = 0.0, epoch1_adv_sum = 0.0;
  std::size_t epoch1_batches = 0;

  CiardResult out;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool teacher_updates = cfg.enable_itt && epoch > cfg.freeze_epochs;
    robust_teacher.set_frozen(!teacher_updates);
    const double lr = cosine_lr(epoch, sched);
    opt.set_lr(lr);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.teacher_updated = teacher_updates;
    std::size_t nb = 0;

    BatchIterator it(ds, cfg.batch_size, true, batch_seed(cfg.seed, kShuffleStream, epoch, 0));
    for (std::size_t bi = 0; !it.done(); ++bi) {
      const Batch b = it.next();
      try {
        const Tensor x = prepare_batch(b, cfg.use_augment, cfg.augment, cfg.seed, epoch, bi);
        const AttackModels am{&student, &clean_teacher};
        const Tensor xa = attack_batch(am, x, b.y, cfg.train_attack, batch_seed(cfg.seed, kAttackStream, epoch, bi));

        ForwardTape s_clean = forward_with_tape(student, x);
        ForwardTape s_adv = forward_with_tape(student, xa);
        const Tensor t_nat_clean = forward(clean_teacher, x);
        const Tensor t_nat_adv = forward(clean_teacher, xa);
        ForwardTape t_adv = forward_with_tape(robust_teacher, xa);

        const double l_nat = softened_kl(s_clean.logits, t_nat_clean, weights.tau_distill, weights.scale_by_tau2);
        const double l_adv = softened_kl(s_adv.logits, t_adv.logits, weights.tau_distill, weights.scale_by_tau2);
        if (!weights.l_nat_init) {
          weights.l_nat_init = l_nat;
          weights.l_adv_init = l_adv;
        }
        if (epoch == 1) {
          epoch1_nat_sum += l_nat;
          epoch1_adv_sum += l_adv;
          ++epoch1_batches;
        }
        weights = adaptive_weight_update(weights, l_nat, l_adv);

        LossWeights effective = weights;
        if (!cfg.enable_push) effective.lambda_push = 0.0;
        StudentLoss sl = student_total_loss(s_clean.logits, t_nat_clean, s_adv.logits, t_adv.logits, t_nat_adv, b.y,
                                            effective);
        LossGrad tl = teacher_loss_grad(t_adv.logits, b.y);
        sl.components.l_adv_teacher = tl.value;
        if (!std::isfinite(sl.components.l_student) || !std::isfinite(tl.value)) {
          throw NumericError("non-finite loss");
        }

        ParamSet grads = backward(student, s_clean, sl.d_student_clean).param_grads;
        grads += backward(student, s_adv, sl.d_student_adv).param_grads;
        opt.step(student, grads);
        if (teacher_updates) teacher_opt.step(robust_teacher, backward(robust_teacher, t_adv, tl.d_first).param_grads);

        const auto& c = sl.components;
        log.l_nat += c.l_nat;
        log.l_adv += c.l_adv;
        log.l_push += c.l_push;
        log.l_student += c.l_student;
        log.l_adv_teacher += c.l_adv_teacher;
        ++nb;

        if (observer.on_batch) {
          BatchRecord rec{epoch, bi, c, weights, effective.lambda_push, 0.0, true};
          for (std::size_t i = 0; i < x.numel(); ++i) {
            rec.max_linf = std::max(rec.max_linf, static_cast<double>(std::fabs(xa[i] - x[i])));
            rec.in_unit_box = rec.in_unit_box && xa[i] >= 0.0f && xa[i] <= 1.0f;
          }
          observer.on_batch(rec);
        }
      } catch (const NumericError& e) {
        throw TrainingError(std::string("distillation diverged: ") + e.what(), epoch);
      }
    }
    if (epoch == 1 && cfg.normalizer_epoch_mean && epoch1_batches > 0) {
      weights.l_nat_init = epoch1_nat_sum / static_cast<double>(epoch1_batches);
      weights.l_adv_init = epoch1_adv_sum / static_cast<double>(epoch1_batches);
    }

    const double inv = nb ? 1.0 / static_cast<double>(nb) : 0.0;
    log.l_nat *= inv;
    log.l_adv *= inv;
    log.l_push *= inv;
    log.l_student *= inv;
    log.l_adv_teacher *= inv;
    log.w_nat = weights.w_nat;
    log.w_adv = weights.w_adv();
    log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.logs.push_back(log);
    if (cfg.last_good_path) save_checkpoint(student, *cfg.last_good_path);
    if (observer.on_epoch) observer.on_epoch(log, student, robust_teacher);
  }
  robust_teacher.set_frozen(false);
  out.student = std::move(student);
  out.robust_teacher = std::move(robust_teacher);
  return out;
}

void write_epoch_log_csv(const std::vector<EpochLog>& logs, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "epoch,l_nat,l_adv,l_push,l_student,l_teacher,w_nat,lr,teacher_updated\n";
  for (const auto& l : logs) {
    os << l.epoch << ',' << fmt(l.l_nat) << ',' << fmt(l.l_adv) << ',' << fmt(l.l_push) << ',' << fmt(l.l_student)
       << ',' << fmt(l.l_adv_teacher) << ',' << fmt(l.w_nat) << ',' << fmt(l.lr) << ',' << (l.teacher_updated ? 1 : 0)
       << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

void write_pretrain_log_csv(const std::vector<PretrainLog>& logs, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "epoch,loss,train_acc,lr\n";
  for (const auto& l : logs) os << l.epoch << ',' << fmt(l.loss) << ',' << fmt(l.train_acc) << ',' << fmt(l.lr) << '\n';
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace ciard
