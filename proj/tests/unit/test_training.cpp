// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "ciard/checkpoint.hpp"
#include "ciard/errors.hpp"
#include "ciard/eval.hpp"
#include "ciard/training.hpp"
#include "helpers.hpp"

using namespace ciard;

namespace {

const Dataset& small_moons() {
  static const Dataset d = gen_two_moons(256, 0.1, 11);
  return d;
}

PretrainConfig quick_pretrain(std::uint64_t seed) {
  PretrainConfig c;
  c.epochs = 6;
  c.seed = seed;
  return c;
}

struct Teachers {
  Model clean, robust;
};

const Teachers& teachers() {
  static const Teachers t = [] {
    const auto spec = ModelSpec::mlp(2, {32, 32}, 2);
    return Teachers{pretrain_clean_teacher(spec, small_moons(), quick_pretrain(1)).model,
                    pretrain_robust_teacher(spec, small_moons(), quick_pretrain(2), RobustMode::Sat).model};
  }();
  return t;
}

TrainConfig quick_train(std::uint64_t seed) {
  TrainConfig c = TrainConfig::desk();
  c.epochs = 6;
  c.freeze_epochs = 2;
  c.seed = seed;
  return c;
}

const ModelSpec kStudent = ModelSpec::mlp(2, {16, 16}, 2);

}  // namespace

TEST_CASE("config defaults") {
  const TrainConfig t;
  CHECK(t.epochs == 300);
  CHECK(t.freeze_epochs == 50);
  CHECK(t.batch_size == 64);
  CHECK(t.teacher_lr == 1e-5);
  CHECK(t.weights.w_nat == 0.5);
  CHECK(t.weights.eta == 0.025);
  CHECK(t.weights.lambda_push == 1.0);
  CHECK(t.weights.tau_push == 4.0);
  CHECK(t.train_attack.iters == 10);
  const TrainConfig d = TrainConfig::desk();
  CHECK(d.epochs == 60);
  CHECK(d.freeze_epochs == 10);
  TrainConfig bad = d;
  bad.freeze_epochs = 60;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_robust_mode("trades") == RobustMode::Trades);
  CHECK_THROWS_AS(parse_robust_mode("mart"), ConfigError);
}

TEST_CASE("clean teacher pretraining is seeded and learns") {
  const auto spec = ModelSpec::mlp(2, {32, 32}, 2);
  PretrainConfig c = quick_pretrain(3);
  c.epochs = 20;
  const auto a = pretrain_clean_teacher(spec, small_moons(), c);
  const auto b = pretrain_clean_teacher(spec, small_moons(), c);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.logs.size() == 20);
  CHECK(a.logs.back().loss < a.logs.front().loss);
  CHECK(accuracy(a.model, small_moons()) > 85.0);
}

TEST_CASE("SAT with zero radius degenerates to clean training") {
  const auto spec = ModelSpec::mlp(2, {8}, 2);
  PretrainConfig c = quick_pretrain(4);
  c.attack.epsilon = 0.0;
  const auto clean = pretrain_clean_teacher(spec, small_moons(), c);
  const auto sat = pretrain_robust_teacher(spec, small_moons(), c, RobustMode::Sat);
  for (std::size_t e = 0; e < clean.logs.size(); ++e) CHECK(std::fabs(clean.logs[e].loss - sat.logs[e].loss) < 1e-6);
  CHECK(clean.model.params() == sat.model.params());
}

TEST_CASE("TRADES pretraining runs and is deterministic") {
  const auto spec = ModelSpec::mlp(2, {8}, 2);
  PretrainConfig c = quick_pretrain(5);
  c.epochs = 2;
  const auto a = pretrain_robust_teacher(spec, small_moons(), c, RobustMode::Trades);
  const auto b = pretrain_robust_teacher(spec, small_moons(), c, RobustMode::Trades);
  CHECK(a.model.params() == b.model.params());
  CHECK(std::isfinite(a.logs.back().loss));
}

TEST_CASE("pretraining divergence is reported with its epoch") {
  PretrainConfig c = quick_pretrain(6);
  c.lr0 = 1e30;
  c.momentum = 0.0;
  try {
    pretrain_clean_teacher(ModelSpec::mlp(2, {8}, 2), small_moons(), c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 1);
  }
}

TEST_CASE("ciard: batch-level invariants") {
  const auto& t = teachers();
  TrainConfig c = quick_train(7);
  int batches = 0;
  TrainObserver obs;
  obs.on_batch = [&](const BatchRecord& r) {
    ++batches;
    const auto& k = r.components;
    CHECK(std::fabs(k.l_student - (r.weights.w_adv() * k.l_adv + r.weights.w_nat * k.l_nat -
                                   r.lambda_effective * k.l_push)) < 1e-5);
    CHECK(k.l_nat >= 0.0);
    CHECK(k.l_adv >= 0.0);
    CHECK(k.l_push >= 0.0);
    CHECK(r.weights.w_nat >= 0.0);
    CHECK(r.weights.w_nat <= 1.0);
    CHECK(r.max_linf <= c.train_attack.epsilon + 1e-6);
    CHECK(r.in_unit_box);
    CHECK(r.lambda_effective == 1.0);
  };
  const auto res = ciard_train(kStudent, t.clean, t.robust, small_moons(), c, obs);
  CHECK(batches == 6 * 4);
  CHECK(res.logs.size() == 6);
  for (const auto& l : res.logs) CHECK(l.teacher_updated == (l.epoch > 2));
}

TEST_CASE("ciard: freeze window and clean teacher immutability") {
  const auto& t = teachers();
  const auto clean_digest = param_digest(t.clean), robust_digest = param_digest(t.robust);
  std::vector<std::uint64_t> robust_by_epoch;
  TrainObserver obs;
  obs.on_epoch = [&](const EpochLog&, const Model&, const Model& robust) {
    robust_by_epoch.push_back(param_digest(robust));
  };
  const auto res = ciard_train(kStudent, t.clean, t.robust, small_moons(), quick_train(8), obs);
  REQUIRE(robust_by_epoch.size() == 6);
  CHECK(robust_by_epoch[0] == robust_digest);
  CHECK(robust_by_epoch[1] == robust_digest);
  CHECK(robust_by_epoch[2] != robust_digest);
  CHECK(param_digest(res.robust_teacher) == robust_by_epoch.back());
  CHECK(param_digest(t.clean) == clean_digest);
}

TEST_CASE("ciard: ablation switches") {
  const auto& t = teachers();
  TrainConfig c = quick_train(9);
  c.enable_itt = false;
  c.enable_push = false;
  TrainObserver obs;
  obs.on_batch = [](const BatchRecord& r) {
    CHECK(r.lambda_effective == 0.0);
    CHECK(r.components.push_term == 0.0);
  };
  const auto res = ciard_train(kStudent, t.clean, t.robust, small_moons(), c, obs);
  CHECK(res.robust_teacher.params() == t.robust.params());
  for (const auto& l : res.logs) CHECK_FALSE(l.teacher_updated);
}

TEST_CASE("ciard: deterministic given seed and config") {
  const auto& t = teachers();
  const auto a = ciard_train(kStudent, t.clean, t.robust, small_moons(), quick_train(10));
  const auto b = ciard_train(kStudent, t.clean, t.robust, small_moons(), quick_train(10));
  const auto c = ciard_train(kStudent, t.clean, t.robust, small_moons(), quick_train(11));
  CHECK(a.student.params() == b.student.params());
  CHECK(a.robust_teacher.params() == b.robust_teacher.params());
  CHECK_FALSE(a.student.params() == c.student.params());
  for (std::size_t e = 0; e < a.logs.size(); ++e) CHECK(a.logs[e].l_student == b.logs[e].l_student);
}

TEST_CASE("ciard: KL_JOINT training attack and epoch-mean normalisers") {
  const auto& t = teachers();
  TrainConfig c = quick_train(12);
  c.epochs = 3;
  c.freeze_epochs = 1;
  c.train_attack.objective = AttackObjective::KlJoint;
  c.normalizer_epoch_mean = true;
  const auto res = ciard_train(kStudent, t.clean, t.robust, small_moons(), c);
  CHECK(res.logs.size() == 3);
  CHECK(res.student.lineage().find("attack=kl_joint") != std::string::npos);
}

TEST_CASE("ciard: divergence keeps the last good checkpoint") {
  const auto& t = teachers();
  const auto dir = testing::temp_dir("diverge");
  TrainConfig c = quick_train(13);
  c.last_good_path = dir / "last.ckpt";
  std::vector<std::uint64_t> digests;
  TrainObserver obs;
  obs.on_epoch = [&](const EpochLog&, const Model& student, const Model&) { digests.push_back(param_digest(student)); };

  // The robust teacher blows up once it starts training after the freeze window.
  c.teacher_lr = 1e30;
  try {
    ciard_train(kStudent, t.clean, t.robust, small_moons(), c, obs);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() == 3);
  }
  REQUIRE(digests.size() == 2);
  CHECK(param_digest(load_checkpoint(dir / "last.ckpt", kStudent)) == digests.back());

  Model poisoned = t.clean;
  poisoned.mutable_params()[0].value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(ciard_train(kStudent, poisoned, t.robust, small_moons(), quick_train(13)), TrainingError);
}

TEST_CASE("epoch log csv") {
  const auto dir = testing::temp_dir("logs");
  std::vector<EpochLog> logs(2);
  logs[0].epoch = 1;
  logs[0].l_nat = 0.5;
  logs[0].lr = 0.1;
  logs[1].epoch = 2;
  logs[1].teacher_updated = true;
  write_epoch_log_csv(logs, dir / "log.csv");
  CHECK(testing::read_file(dir / "log.csv") ==
        "epoch,l_nat,l_adv,l_push,l_student,l_teacher,w_nat,lr,teacher_updated\n"
        "1,0.5,0,0,0,0,0,0.1,0\n"
        "2,0,0,0,0,0,0,0,1\n");
}
