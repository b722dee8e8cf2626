// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "ciard/cli.hpp"
#include "ciard/data.hpp"
#include "ciard/eval.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ciard");
  std::ostringstream out, err;
  const int code = ciard::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

/// Small dataset and two quick teachers shared by the train and eval cases.
const fs::path& fixture() {
  static const fs::path dir = [] {
    const auto d = testing::temp_dir("cli_fixture");
    const auto s = d.string();
    REQUIRE(run({"synth-data", "--n", "128", "--n-test", "64", "--seed", "1", "--out", s}).code == 0);
    for (const std::string role : {"clean", "robust"}) {
      const auto r = run({"pretrain", "--role", role, "--data", s + "/train.csv", "--hidden", "16", "--epochs", "3",
                          "--seed", "2", "--out", s + "/" + role + ".ckpt"});
      REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    return d;
  }();
  return dir;
}

std::vector<std::string> train_args(const fs::path& out) {
  const auto s = fixture().string();
  return {"train", "--data", s + "/train.csv", "--clean-teacher", s + "/clean.ckpt", "--robust-teacher",
          s + "/robust.ckpt", "--hidden", "8", "--epochs", "3", "--freeze-epochs", "1", "--seed", "4", "--out",
          (out / "student.ckpt").string(), "--log", (out / "log.csv").string()};
}

}  // namespace

TEST_CASE("cli: synth-data is deterministic") {
  const auto a = testing::temp_dir("cli_synth_a"), b = testing::temp_dir("cli_synth_b");
  CHECK(run({"synth-data", "--n", "50", "--n-test", "10", "--seed", "3", "--out", a.string()}).code == 0);
  CHECK(run({"synth-data", "--n", "50", "--n-test", "10", "--seed", "3", "--out", b.string()}).code == 0);
  CHECK(testing::read_file(a / "train.csv") == testing::read_file(b / "train.csv"));
  CHECK(testing::read_file(a / "test.csv") == testing::read_file(b / "test.csv"));
  CHECK(testing::read_file(a / "train.csv") != testing::read_file(a / "test.csv"));
  CHECK(fs::exists(a / "manifest.json"));
}

TEST_CASE("cli: usage errors exit 2") {
  const auto dir = testing::temp_dir("cli_usage").string();
  const auto odd = run({"synth-data", "--n", "51", "--seed", "1", "--out", dir});
  CHECK(odd.code == 2);
  CHECK(odd.err.find("parameter error") != std::string::npos);
  CHECK(run({"synth-data", "--n", "50", "--out", dir}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"synth-data", "--n", "ten", "--seed", "1"}).code == 2);
  CHECK(run({"report"}).code == 2);
  const auto s = fixture().string();
  CHECK(run({"eval", "--model", s + "/clean.ckpt", "--data", s + "/test.csv", "--attacks", "autoattack", "--seed", "1",
             "--out", dir + "/m.csv"})
            .code == 2);
  CHECK(run({"eval", "--model", s + "/clean.ckpt", "--data", s + "/test.csv", "--attacks", "square", "--surrogate",
             s + "/robust.ckpt", "--seed", "1", "--out", dir + "/m.csv"})
            .code == 2);
  CHECK(run({"eval", "--model", dir + "/missing.ckpt", "--data", s + "/test.csv", "--seed", "1"}).code == 2);
}

TEST_CASE("cli: eval with zero radius reports robust equal to clean") {
  const auto s = fixture().string();
  const auto dir = testing::temp_dir("cli_eval");
  const auto r = run({"eval", "--model", s + "/clean.ckpt", "--data", s + "/test.csv", "--attack-eps", "0", "--seed",
                      "1", "--model-id", "tn", "--out", (dir / "m.csv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto recs = ciard::records_from_csv(testing::read_file(dir / "m.csv"));
  CHECK(recs.size() == 5);
  for (const auto& rec : recs) {
    CHECK(rec.model_id == "tn");
    CHECK(rec.robust_acc == rec.clean_acc);
    CHECK(rec.n_samples == 64);
  }
  CHECK(r.out == testing::read_file(dir / "m.csv"));
}

TEST_CASE("cli: report merges and is idempotent") {
  const auto s = fixture().string();
  const auto dir = testing::temp_dir("cli_report");
  const auto a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
  REQUIRE(run({"eval", "--model", s + "/clean.ckpt", "--data", s + "/test.csv", "--attacks", "fgsm,pgd_sat", "--seed",
               "1", "--model-id", "tn", "--out", a})
              .code == 0);
  REQUIRE(run({"eval", "--model", s + "/robust.ckpt", "--data", s + "/test.csv", "--attacks", "fgsm", "--seed", "1",
               "--model-id", "ta", "--out", b})
              .code == 0);
  const auto r1 = run({"report", a, b, "--out-csv", (dir / "all.csv").string(), "--out-md", (dir / "t.md").string()});
  REQUIRE_MESSAGE(r1.code == 0, r1.err);
  CHECK(ciard::records_from_csv(testing::read_file(dir / "all.csv")).size() == 3);
  CHECK(r1.out == testing::read_file(dir / "t.md"));
  const auto r2 = run({"report", (dir / "all.csv").string(), "--out-csv", (dir / "again.csv").string()});
  CHECK(r2.code == 0);
  CHECK(testing::read_file(dir / "again.csv") == testing::read_file(dir / "all.csv"));
  CHECK(r2.out == r1.out);
}

TEST_CASE("cli: flags override the config file") {
  const auto dir = testing::temp_dir("cli_config");
  testing::write_file(dir / "c.json", R"({"seed": 5, "data": {"n": 40, "n_test": 0}, "output": {"dir": ")" +
                                          (dir / "from_file").string() + R"("}})");
  REQUIRE(run({"synth-data", "--config", (dir / "c.json").string()}).code == 0);
  REQUIRE(run({"synth-data", "--config", (dir / "c.json").string(), "--n", "60", "--out", (dir / "flag").string()})
              .code == 0);
  const auto from_file = ciard::load_dataset_csv(dir / "from_file" / "train.csv");
  const auto flag = ciard::load_dataset_csv(dir / "flag" / "train.csv");
  CHECK(from_file.size() == 40);
  CHECK(flag.size() == 60);
  CHECK_FALSE(fs::exists(dir / "from_file" / "test.csv"));
  testing::write_file(dir / "bad.json", "{ not json");
  CHECK(run({"synth-data", "--config", (dir / "bad.json").string()}).code == 2);
}

TEST_CASE("cli: train writes a reproducible checkpoint and log") {
  const auto a = testing::temp_dir("cli_train_a"), b = testing::temp_dir("cli_train_b");
  const auto ra = run(train_args(a));
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  REQUIRE(run(train_args(b)).code == 0);
  CHECK(fs::exists(a / "student.ckpt"));
  CHECK(testing::read_file(a / "student.ckpt") == testing::read_file(b / "student.ckpt"));
  CHECK(testing::read_file(a / "log.csv") == testing::read_file(b / "log.csv"));
  CHECK(testing::read_file(a / "log.csv").rfind("epoch,", 0) == 0);

  auto bad = train_args(a);
  const auto it = std::find(bad.begin(), bad.end(), "--freeze-epochs");
  *(it + 1) = "3";
  CHECK(run(bad).code == 2);
}

TEST_CASE("cli: image datasets by file name") {
  const auto dir = testing::temp_dir("cli_images");
  std::string cifar;
  for (int i = 0; i < 4; ++i) {
    cifar.push_back(static_cast<char>(i % 10));
    for (int k = 0; k < 3072; ++k) cifar.push_back(static_cast<char>((k * 7 + i * 31) % 256));
  }
  testing::write_file(dir / "data_batch_1.bin", cifar);
  auto be32 = [](std::uint32_t v) {
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (24 - 8 * i)) & 0xff);
    return s;
  };
  std::string img = be32(0x803) + be32(4) + be32(28) + be32(28);
  for (int k = 0; k < 4 * 784; ++k) img.push_back(static_cast<char>(k % 256));
  testing::write_file(dir / "train-images-idx3-ubyte", img);
  testing::write_file(dir / "train-labels-idx1-ubyte", be32(0x801) + be32(4) + std::string{1, 2, 3, 4});
  for (const std::string data : {"data_batch_1.bin", "train-images-idx3-ubyte"}) {
    const auto r = run({"pretrain", "--role", "clean", "--data", (dir / data).string(), "--arch", "smallcnn", "--conv",
                        "2", "--hidden", "4", "--epochs", "1", "--seed", "1", "--out", (dir / (data + ".ckpt")).string()});
    CHECK_MESSAGE(r.code == 0, r.err);
  }
  fs::remove(dir / "train-labels-idx1-ubyte");
  CHECK(run({"pretrain", "--role", "clean", "--data", (dir / "train-images-idx3-ubyte").string(), "--arch", "smallcnn",
             "--epochs", "1", "--seed", "1", "--out", (dir / "x.ckpt").string()})
            .code == 2);
}
