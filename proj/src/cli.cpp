// SPDX-License-Identifier: Apache-2.0
#include "ciard/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "ciard/checkpoint.hpp"
#include "ciard/data.hpp"
#include "ciard/errors.hpp"
#include "ciard/eval.hpp"
#include "ciard/rng.hpp"
#include "ciard/training.hpp"

namespace ciard::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Usage/config problems detected before any side effect (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Flag -> config overlay

enum class Kind { Int, Double, String, SizeList, StringList, SetTrue, SetFalse };

struct Binding {
  std::string pointer;
  Kind kind;
  std::string raw;
  bool flag = false;
  CLI::Option* opt = nullptr;
};

class Overlay {
 public:
  void option(CLI::App* app, const std::string& name, const std::string& pointer, Kind kind, const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->pointer = pointer;
    b->kind = kind;
    if (kind == Kind::SetTrue || kind == Kind::SetFalse) {
      b->opt = app->add_flag(name, b->flag, help);
    } else {
      static const char* const names[] = {"INT", "FLOAT", "TEXT", "INT,...", "NAME,..."};
      b->opt = app->add_option(name, b->raw, help)->type_name(names[static_cast<int>(kind)]);
    }
    bindings_.push_back(std::move(b));
  }

  json build() const {
    json patch = json::object();
    for (const auto& b : bindings_) {
      if (b->opt->count() == 0) continue;
      const json::json_pointer ptr(b->pointer);
      try {
        switch (b->kind) {
          case Kind::Int: patch[ptr] = std::stoll(b->raw); break;
          case Kind::Double: patch[ptr] = std::stod(b->raw); break;
          case Kind::String: patch[ptr] = b->raw; break;
          case Kind::SizeList: {
            json arr = json::array();
            std::stringstream ss(b->raw);
            std::string part;
            while (std::getline(ss, part, ',')) {
              if (!part.empty()) arr.push_back(std::stoull(part));
            }
            patch[ptr] = arr;
            break;
          }
          case Kind::StringList: {
            json arr = json::array();
            std::stringstream ss(b->raw);
            std::string part;
            while (std::getline(ss, part, ',')) {
              if (!part.empty()) arr.push_back(part);
            }
            patch[ptr] = arr;
            break;
          }
          case Kind::SetTrue: patch[ptr] = true; break;
          case Kind::SetFalse: patch[ptr] = false; break;
        }
      } catch (const std::logic_error&) {
        throw UsageError("invalid value '" + b->raw + "' for " + b->opt->get_name());
      }
    }
    return patch;
  }

 private:
  std::vector<std::unique_ptr<Binding>> bindings_;
};

// ---------------------------------------------------------------------------
// Config access

class Config {
 public:
  explicit Config(json j) : j_(std::move(j)) {}

  bool has(const std::string& p) const { return j_.contains(json::json_pointer(p)); }

  template <class T>
  T get(const std::string& p, T def) const {
    const json::json_pointer ptr(p);
    if (!j_.contains(ptr)) return def;
    try {
      return j_.at(ptr).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config field " + p + " has the wrong type");
    }
  }

  template <class T>
  T require(const std::string& p) const {
    if (!has(p)) throw UsageError("missing required config field " + p);
    return get<T>(p, T{});
  }

  std::vector<std::string> string_list(const std::string& p) const {
    const json::json_pointer ptr(p);
    if (!j_.contains(ptr)) return {};
    const json& v = j_.at(ptr);
    if (v.is_string()) {
      std::vector<std::string> out;
      std::stringstream ss(v.get<std::string>());
      std::string part;
      while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
      }
      return out;
    }
    return get<std::vector<std::string>>(p, {});
  }

 private:
  json j_;
};

Config resolve(const std::string& config_path, const Overlay& overlay) {
  json base = json::object();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw UsageError("cannot read config file '" + config_path + "'");
    try {
      base = json::parse(is);
    } catch (const json::exception& e) {
      throw UsageError("config file '" + config_path + "' is not valid JSON: " + e.what());
    }
    if (!base.is_object()) throw UsageError("config file must hold a JSON object");
  }
  base.merge_patch(overlay.build());
  return Config(std::move(base));
}

fs::path default_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path output_path(const Config& c, const std::string& p, const std::string& default_name) {
  return c.has(p) ? fs::path(c.get<std::string>(p, "")) : default_dir() / default_name;
}

void require_readable(const fs::path& p, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) throw UsageError(what + " '" + p.string() + "' does not exist");
}

void require_writable_parent(const fs::path& p) {
  const fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  std::error_code ec;
  if (!fs::is_directory(parent, ec)) throw UsageError("output directory '" + parent.string() + "' does not exist");
}

std::uint64_t require_seed(const Config& c) {
  if (!c.has("/seed")) throw UsageError("a seed is required (--seed or \"seed\" in the config)");
  const auto s = c.get<long long>("/seed", 0);
  if (s < 0) throw UsageError("seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

ModelSpec model_spec(const Config& c, const std::string& section, const Dataset& ds) {
  const std::string arch = c.get<std::string>(section + "/arch", "mlp");
  const auto hidden = c.get<std::vector<std::size_t>>(section + "/hidden", {64, 64});
  try {
    if (parse_arch(arch) == Arch::Mlp) {
      if (ds.sample_shape().size() != 1) throw UsageError("mlp needs vector samples; this dataset holds images");
      return ModelSpec::mlp(ds.sample_shape()[0], hidden, ds.num_classes);
    }
    const auto conv = c.get<std::vector<std::size_t>>(section + "/conv", {16, 32});
    return ModelSpec::small_cnn(ds.sample_shape(), conv, hidden, ds.num_classes);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
}

AttackConfig attack_config(const Config& c, AttackConfig a) {
  a.epsilon = c.get<double>("/attack/epsilon", a.epsilon);
  a.step = c.get<double>("/attack/step", a.step);
  a.iters = c.get<int>("/attack/iters", a.iters);
  if (c.has("/attack/objective")) a.objective = parse_objective(c.get<std::string>("/attack/objective", ""));
  a.rand_init = c.get<bool>("/attack/rand_init", a.rand_init);
  a.kappa = c.get<double>("/attack/kappa", a.kappa);
  a.query_budget = c.get<int>("/attack/query_budget", a.query_budget);
  a.kl_tau = c.get<double>("/attack/kl_tau", a.kl_tau);
  return a;
}

void add_attack_flags(Overlay& o, CLI::App* app) {
  o.option(app, "--attack-eps", "/attack/epsilon", Kind::Double, "L-inf radius of the training attack");
  o.option(app, "--attack-step", "/attack/step", Kind::Double, "PGD step size");
  o.option(app, "--attack-iters", "/attack/iters", Kind::Int, "PGD iterations");
  o.option(app, "--attack-objective", "/attack/objective", Kind::String, "ce_label | kl_self | kl_joint | cw_margin");
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + tmp.string() + "' for writing");
    os << text;
    if (!os) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

/// CSV by default; `*.bin` is a CIFAR-10 batch; `*images-idx3-ubyte` pairs with its `labels-idx1-ubyte` file.
Dataset load_dataset(const fs::path& p) {
  const std::string name = p.filename().string();
  if (p.extension() == ".bin") return load_cifar10_bin({p});
  if (const auto at = name.find("images-idx3-ubyte"); at != std::string::npos) {
    std::string labels = name;
    labels.replace(at, 17, "labels-idx1-ubyte");
    const fs::path lp = p.parent_path() / labels;
    require_readable(lp, "labels file");
    return load_idx(p, lp);
  }
  return load_dataset_csv(p);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth_data(const Config& c, std::ostream& out) {
  const std::uint64_t seed = require_seed(c);
  const std::string kind = c.get<std::string>("/data/kind", "two-moons");
  const auto n = c.get<long long>("/data/n", 2000);
  const auto n_test = c.get<long long>("/data/n_test", 0);
  const double noise = c.get<double>("/data/noise", 0.1);
  const auto classes = c.get<long long>("/data/classes", 3);
  const double spread = c.get<double>("/data/spread", 0.08);
  const fs::path dir = c.has("/output/dir") ? fs::path(c.get<std::string>("/output/dir", "")) : default_dir();

  if (kind != "two-moons" && kind != "blobs") throw UsageError("unknown dataset kind '" + kind + "'");
  if (n <= 0 || n_test < 0) throw UsageError("parameter error: n must be > 0 and n_test >= 0");
  if (kind == "two-moons" && (n % 2 != 0 || n_test % 2 != 0)) {
    throw UsageError("parameter error: two-moons needs an even sample count, got n=" + std::to_string(n) +
                     " n_test=" + std::to_string(n_test));
  }
  if (!(noise >= 0.0) || !(spread >= 0.0)) throw UsageError("parameter error: noise and spread must be >= 0");
  if (kind == "blobs" && classes < 2) throw UsageError("parameter error: blobs need at least two classes");
  {
    std::error_code ec;
    const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
    if (!fs::is_directory(dir, ec) && !fs::is_directory(parent, ec)) {
      throw UsageError("output directory '" + dir.string() + "' cannot be created");
    }
  }

  auto make = [&](std::size_t count, std::uint64_t s) {
    return kind == "two-moons" ? gen_two_moons(count, noise, s)
                               : gen_blobs(count, static_cast<std::size_t>(classes), spread, s);
  };
  fs::create_directories(dir);
  const Dataset train = make(static_cast<std::size_t>(n), seed);
  save_dataset_csv(train, dir / "train.csv");
  if (n_test > 0) save_dataset_csv(make(static_cast<std::size_t>(n_test), derive_seed(seed, 1)), dir / "test.csv");

  json manifest = {{"kind", kind},   {"n", n},          {"n_test", n_test},
                   {"noise", noise}, {"seed", seed},    {"num_classes", train.num_classes},
                   {"files", n_test > 0 ? json::array({"train.csv", "test.csv"}) : json::array({"train.csv"})}};
  if (kind == "blobs") manifest["spread"] = spread;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << train.size() << " training samples to " << (dir / "train.csv").string() << '\n';
  return kOk;
}

int cmd_pretrain(const Config& c, std::ostream& out) {
  const std::uint64_t seed = require_seed(c);
  const std::string role = c.get<std::string>("/pretrain/role", "");
  if (role != "clean" && role != "robust") throw UsageError("--role must be clean or robust");
  RobustMode mode = RobustMode::Sat;
  try {
    mode = parse_robust_mode(c.get<std::string>("/pretrain/mode", "sat"));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const fs::path data = c.require<std::string>("/data/train");
  require_readable(data, "training data");
  const fs::path ckpt = output_path(c, "/output/checkpoint", "teacher_" + role + ".ckpt");
  const fs::path log = c.has("/output/log") ? fs::path(c.get<std::string>("/output/log", "")) : fs::path(ckpt.string() + ".log.csv");
  require_writable_parent(ckpt);
  require_writable_parent(log);

  PretrainConfig pc;
  pc.seed = seed;
  pc.epochs = c.get<int>("/pretrain/epochs", pc.epochs);
  pc.batch_size = c.get<std::size_t>("/pretrain/batch_size", pc.batch_size);
  pc.lr0 = c.get<double>("/pretrain/lr0", pc.lr0);
  pc.lr_min = c.get<double>("/pretrain/lr_min", pc.lr_min);
  pc.trades_beta = c.get<double>("/pretrain/trades_beta", pc.trades_beta);
  pc.use_augment = c.get<bool>("/pretrain/augment", pc.use_augment);
  pc.attack = attack_config(c, pc.attack);
  try {
    pc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  const Dataset ds = load_dataset(data);
  const ModelSpec spec = model_spec(c, "/model", ds);
  PretrainResult r = role == "clean" ? pretrain_clean_teacher(spec, ds, pc) : pretrain_robust_teacher(spec, ds, pc, mode);
  write_pretrain_log_csv(r.logs, log);
  save_checkpoint(r.model, ckpt);
  out << "pretrained " << role << " teacher: train acc " << r.logs.back().train_acc << "% -> " << ckpt.string() << '\n';
  return kOk;
}

int cmd_train(const Config& c, std::ostream& out) {
  const std::uint64_t seed = require_seed(c);
  const fs::path data = c.require<std::string>("/data/train");
  const fs::path clean = c.require<std::string>("/teachers/clean");
  const fs::path robust = c.require<std::string>("/teachers/robust");
  require_readable(data, "training data");
  require_readable(clean, "clean teacher checkpoint");
  require_readable(robust, "robust teacher checkpoint");
  const fs::path ckpt = output_path(c, "/output/checkpoint", "student.ckpt");
  const fs::path log = c.has("/output/log") ? fs::path(c.get<std::string>("/output/log", "")) : fs::path(ckpt.string() + ".log.csv");
  require_writable_parent(ckpt);
  require_writable_parent(log);

  TrainConfig tc = TrainConfig::desk();
  tc.seed = seed;
  tc.epochs = c.get<int>("/train/epochs", tc.epochs);
  tc.freeze_epochs = c.get<int>("/train/freeze_epochs", tc.freeze_epochs);
  tc.batch_size = c.get<std::size_t>("/train/batch_size", tc.batch_size);
  tc.lr0 = c.get<double>("/train/lr0", tc.lr0);
  tc.lr_min = c.get<double>("/train/lr_min", tc.lr_min);
  tc.momentum = c.get<double>("/train/momentum", tc.momentum);
  tc.weight_decay = c.get<double>("/train/weight_decay", tc.weight_decay);
  tc.teacher_lr = c.get<double>("/train/teacher_lr", tc.teacher_lr);
  tc.teacher_momentum = c.get<double>("/train/teacher_momentum", tc.teacher_momentum);
  tc.enable_push = c.get<bool>("/train/enable_push", tc.enable_push);
  tc.enable_itt = c.get<bool>("/train/enable_itt", tc.enable_itt);
  tc.use_augment = c.get<bool>("/train/augment", tc.use_augment);
  tc.normalizer_epoch_mean = c.get<bool>("/train/normalizer_epoch_mean", tc.normalizer_epoch_mean);
  tc.weights.w_nat = c.get<double>("/train/w_nat", tc.weights.w_nat);
  tc.weights.lambda_push = c.get<double>("/train/lambda_push", tc.weights.lambda_push);
  tc.weights.eta = c.get<double>("/train/eta", tc.weights.eta);
  tc.weights.tau_push = c.get<double>("/train/tau_push", tc.weights.tau_push);
  tc.weights.tau_distill = c.get<double>("/train/tau_distill", tc.weights.tau_distill);
  tc.weights.clamp_push = c.get<bool>("/train/clamp_push", tc.weights.clamp_push);
  try {
    tc.train_attack = attack_config(c, tc.train_attack);
    tc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }

  const Dataset ds = load_dataset(data);
  const ModelSpec spec = model_spec(c, "/model", ds);
  const Model t_nat = load_checkpoint(clean);
  const Model t_adv = load_checkpoint(robust);
  CiardResult r = ciard_train(spec, t_nat, t_adv, ds, tc);
  write_epoch_log_csv(r.logs, log);
  save_checkpoint(r.student, ckpt);
  if (c.has("/output/robust_teacher")) save_checkpoint(r.robust_teacher, c.get<std::string>("/output/robust_teacher", ""));
  out << "trained student for " << tc.epochs << " epochs (push=" << tc.enable_push << ", itt=" << tc.enable_itt
      << ", lambda=" << tc.weights.lambda_push << ") -> " << ckpt.string() << '\n';
  return kOk;
}

int cmd_eval(const Config& c, std::ostream& out) {
  const std::uint64_t seed = require_seed(c);
  const fs::path model_path = c.require<std::string>("/eval/model");
  const fs::path data = c.require<std::string>("/data/test");
  require_readable(model_path, "model checkpoint");
  require_readable(data, "evaluation data");
  std::optional<fs::path> surrogate;
  if (c.has("/eval/surrogate")) {
    surrogate = c.get<std::string>("/eval/surrogate", "");
    require_readable(*surrogate, "surrogate checkpoint");
  }
  auto names = c.string_list("/eval/attacks");
  if (names.empty()) names = standard_attack_names();
  std::vector<EvalAttack> attacks;
  for (std::size_t i = 0; i < names.size(); ++i) {
    try {
      attacks.push_back(standard_attack(names[i]));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    EvalAttack& a = attacks.back();
    a.cfg.seed = derive_seed(seed, i);
    if (c.has("/eval/attack_eps")) {
      a.cfg.epsilon = c.get<double>("/eval/attack_eps", a.cfg.epsilon);
      if (a.kind == AttackKind::Fgsm) a.cfg.step = a.cfg.epsilon;
    }
    a.cfg.query_budget = c.get<int>("/eval/query_budget", a.cfg.query_budget);
    try {
      a.cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    if (surrogate && a.kind == AttackKind::Square) throw UsageError("square attack cannot be used for transfer evaluation");
  }
  const std::string model_id = c.get<std::string>("/eval/model_id", model_path.stem().string());
  std::optional<fs::path> metrics;
  if (c.has("/output/metrics")) {
    metrics = c.get<std::string>("/output/metrics", "");
    require_writable_parent(*metrics);
  }

  const Dataset ds = load_dataset(data);
  const Model model = load_checkpoint(model_path);
  std::vector<MetricsRecord> records;
  if (surrogate) {
    const Model src = load_checkpoint(*surrogate);
    for (const auto& a : attacks) records.push_back(transfer_eval(src, model, ds, a, model_id));
  } else {
    for (const auto& a : attacks) records.push_back(evaluate_attack(model_id, model, ds, a));
  }
  const std::string csv = records_to_csv(records);
  if (metrics) write_text(*metrics, csv);
  out << csv;
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const Config& c, std::ostream& out) {
  if (inputs.empty()) throw UsageError("report needs at least one metrics CSV");
  for (const auto& p : inputs) require_readable(p, "metrics file");
  std::optional<fs::path> out_csv, out_md;
  if (c.has("/output/csv")) {
    out_csv = c.get<std::string>("/output/csv", "");
    require_writable_parent(*out_csv);
  }
  if (c.has("/output/md")) {
    out_md = c.get<std::string>("/output/md", "");
    require_writable_parent(*out_md);
  }
  std::vector<MetricsRecord> records;
  for (const auto& p : inputs) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    auto part = records_from_csv(ss.str());
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw UsageError("report inputs hold no records");
  const std::string md = records_to_markdown(records);
  if (out_csv) write_text(*out_csv, records_to_csv(records));
  if (out_md) write_text(*out_md, md);
  out << md;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-teacher adversarial robustness distillation", "ciard"};
  app.require_subcommand(1);
  std::string config_path;
  Overlay overlay;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  synth->add_option("--config", config_path, "JSON config file");
  overlay.option(synth, "--kind", "/data/kind", Kind::String, "two-moons | blobs");
  overlay.option(synth, "--n", "/data/n", Kind::Int, "training samples");
  overlay.option(synth, "--n-test", "/data/n_test", Kind::Int, "test samples (0 = none)");
  overlay.option(synth, "--noise", "/data/noise", Kind::Double, "two-moons noise std");
  overlay.option(synth, "--classes", "/data/classes", Kind::Int, "blob classes");
  overlay.option(synth, "--spread", "/data/spread", Kind::Double, "blob std");
  overlay.option(synth, "--seed", "/seed", Kind::Int, "random seed");
  overlay.option(synth, "--out", "/output/dir", Kind::String, "output directory");

  auto* pre = app.add_subcommand("pretrain", "pretrain a clean or robust teacher");
  pre->add_option("--config", config_path, "JSON config file");
  overlay.option(pre, "--role", "/pretrain/role", Kind::String, "clean | robust");
  overlay.option(pre, "--mode", "/pretrain/mode", Kind::String, "sat | trades (robust role)");
  overlay.option(pre, "--data", "/data/train", Kind::String, "training dataset CSV");
  overlay.option(pre, "--arch", "/model/arch", Kind::String, "mlp | smallcnn");
  overlay.option(pre, "--hidden", "/model/hidden", Kind::SizeList, "hidden widths, e.g. 128,128");
  overlay.option(pre, "--conv", "/model/conv", Kind::SizeList, "conv channels (smallcnn)");
  overlay.option(pre, "--epochs", "/pretrain/epochs", Kind::Int, "epochs");
  overlay.option(pre, "--batch-size", "/pretrain/batch_size", Kind::Int, "batch size");
  overlay.option(pre, "--lr0", "/pretrain/lr0", Kind::Double, "initial learning rate");
  overlay.option(pre, "--trades-beta", "/pretrain/trades_beta", Kind::Double, "TRADES KL weight");
  overlay.option(pre, "--seed", "/seed", Kind::Int, "random seed");
  overlay.option(pre, "--out", "/output/checkpoint", Kind::String, "output checkpoint");
  overlay.option(pre, "--log", "/output/log", Kind::String, "per-epoch log CSV");
  add_attack_flags(overlay, pre);

  auto* train = app.add_subcommand("train", "distil a student from a clean and a robust teacher");
  train->add_option("--config", config_path, "JSON config file");
  overlay.option(train, "--data", "/data/train", Kind::String, "training dataset CSV");
  overlay.option(train, "--clean-teacher", "/teachers/clean", Kind::String, "clean teacher checkpoint");
  overlay.option(train, "--robust-teacher", "/teachers/robust", Kind::String, "robust teacher checkpoint");
  overlay.option(train, "--arch", "/model/arch", Kind::String, "student architecture");
  overlay.option(train, "--hidden", "/model/hidden", Kind::SizeList, "student hidden widths");
  overlay.option(train, "--conv", "/model/conv", Kind::SizeList, "student conv channels");
  overlay.option(train, "--epochs", "/train/epochs", Kind::Int, "epochs");
  overlay.option(train, "--freeze-epochs", "/train/freeze_epochs", Kind::Int, "robust teacher freeze window");
  overlay.option(train, "--batch-size", "/train/batch_size", Kind::Int, "batch size");
  overlay.option(train, "--lr0", "/train/lr0", Kind::Double, "initial student learning rate");
  overlay.option(train, "--teacher-lr", "/train/teacher_lr", Kind::Double, "robust teacher learning rate");
  overlay.option(train, "--lambda", "/train/lambda_push", Kind::Double, "push loss weight");
  overlay.option(train, "--w-nat", "/train/w_nat", Kind::Double, "initial clean-distillation weight");
  overlay.option(train, "--eta", "/train/eta", Kind::Double, "adaptive weight step");
  overlay.option(train, "--tau-push", "/train/tau_push", Kind::Double, "push loss temperature");
  overlay.option(train, "--tau-distill", "/train/tau_distill", Kind::Double, "distillation temperature");
  overlay.option(train, "--no-push", "/train/enable_push", Kind::SetFalse, "disable the push loss");
  overlay.option(train, "--no-itt", "/train/enable_itt", Kind::SetFalse, "never retrain the robust teacher");
  overlay.option(train, "--clamp-push", "/train/clamp_push", Kind::SetTrue, "cap the push term");
  overlay.option(train, "--seed", "/seed", Kind::Int, "random seed");
  overlay.option(train, "--out", "/output/checkpoint", Kind::String, "student checkpoint");
  overlay.option(train, "--log", "/output/log", Kind::String, "per-epoch log CSV");
  overlay.option(train, "--robust-teacher-out", "/output/robust_teacher", Kind::String, "final robust teacher");
  add_attack_flags(overlay, train);

  auto* ev = app.add_subcommand("eval", "clean and robust accuracy under the attack suite");
  ev->add_option("--config", config_path, "JSON config file");
  overlay.option(ev, "--model", "/eval/model", Kind::String, "model checkpoint");
  overlay.option(ev, "--data", "/data/test", Kind::String, "evaluation dataset CSV");
  overlay.option(ev, "--attacks", "/eval/attacks", Kind::StringList, "fgsm,pgd_sat,pgd_trades,cw,square");
  overlay.option(ev, "--attack-eps", "/eval/attack_eps", Kind::Double, "override epsilon of every attack");
  overlay.option(ev, "--query-budget", "/eval/query_budget", Kind::Int, "square attack queries");
  overlay.option(ev, "--surrogate", "/eval/surrogate", Kind::String, "craft on this model (transfer attack)");
  overlay.option(ev, "--model-id", "/eval/model_id", Kind::String, "name used in the metrics table");
  overlay.option(ev, "--seed", "/seed", Kind::Int, "random seed");
  overlay.option(ev, "--out", "/output/metrics", Kind::String, "metrics CSV");

  auto* rep = app.add_subcommand("report", "merge metrics CSVs into one table");
  std::vector<std::string> inputs;
  rep->add_option("inputs", inputs, "metrics CSV files");
  rep->add_option("--config", config_path, "JSON config file");
  overlay.option(rep, "--out-csv", "/output/csv", Kind::String, "merged CSV");
  overlay.option(rep, "--out-md", "/output/md", Kind::String, "markdown table");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageError;
  }

  try {
    const Config cfg = resolve(config_path, overlay);
    if (synth->parsed()) return cmd_synth_data(cfg, out);
    if (pre->parsed()) return cmd_pretrain(cfg, out);
    if (train->parsed()) return cmd_train(cfg, out);
    if (ev->parsed()) return cmd_eval(cfg, out);
    if (rep->parsed()) return cmd_report(inputs, cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace ciard::cli
