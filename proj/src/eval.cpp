// SPDX-License-Identifier: Apache-2.0
#include "ciard/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ciard/errors.hpp"
#include "ciard/rng.hpp"

namespace ciard {

namespace {

constexpr std::size_t kEvalBatch = 128;

void check_compatible(const Model& model, const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("accuracy of an empty dataset is undefined");
  if (ds.num_classes != model.spec().num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                      std::to_string(model.spec().num_classes));
  }
  if (ds.sample_shape() != model.spec().input_shape) throw ConfigError("dataset sample shape does not match model");
}

int correct_on(const Model& model, const Tensor& x, const Labels& y) {
  const auto pred = argmax_rows(forward(model, x));
  int c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == y[i] ? 1 : 0;
  return c;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round2(v));
  return buf;
}

std::size_t attack_rank(const std::string& id) {
  const auto& names = standard_attack_names();
  std::string base = id;
  if (const auto colon = base.rfind(':'); colon != std::string::npos) base = base.substr(colon + 1);
  const auto it = std::find(names.begin(), names.end(), base);
  return static_cast<std::size_t>(it - names.begin());
}

std::string display_attack(const std::string& id) {
  static const std::vector<std::pair<std::string, std::string>> names = {
      {"fgsm", "FGSM"}, {"pgd_sat", "PGD_SAT"}, {"pgd_trades", "PGD_TRADES"}, {"cw", "CW_inf"}, {"square", "Square"}};
  std::string prefix, base = id;
  if (const auto colon = id.rfind(':'); colon != std::string::npos) {
    prefix = id.substr(0, colon + 1);
    base = id.substr(colon + 1);
  }
  for (const auto& [k, v] : names) {
    if (k == base) return prefix + v;
  }
  return id;
}

}  // namespace

const std::vector<std::string>& standard_attack_names() {
  static const std::vector<std::string> names = {"fgsm", "pgd_sat", "pgd_trades", "cw", "square"};
  return names;
}

EvalAttack standard_attack(const std::string& name) {
  if (name == "fgsm") {
    AttackConfig c;
    c.iters = 1;
    c.step = c.epsilon;
    c.rand_init = false;
    return {name, AttackKind::Fgsm, c};
  }
  if (name == "pgd_sat") return {name, AttackKind::PgdSat, AttackConfig::pgd_sat()};
  if (name == "pgd_trades") return {name, AttackKind::PgdTrades, AttackConfig::pgd_trades()};
  if (name == "cw") return {name, AttackKind::Cw, AttackConfig::cw()};
  if (name == "square") return {name, AttackKind::Square, AttackConfig::square()};
  throw ConfigError("unknown attack '" + name + "'");
}

double MetricsRecord::w_robust() const { return weighted_robustness(clean_acc, robust_acc); }

double weighted_robustness(double clean, double robust) { return 0.5 * (clean + robust); }

double round2(double v) {
  // The nudge absorbs representation error in values such as 75.375.
  const double scaled = v * 100.0;
  return std::round(scaled + std::copysign(1e-7, scaled)) / 100.0;
}

double accuracy(const Model& model, const Dataset& ds) {
  check_compatible(model, ds);
  int correct = 0;
  for (const Batch& b : batches(ds, kEvalBatch, false, 0)) correct += correct_on(model, b.x, b.y);
  return 100.0 * correct / static_cast<double>(ds.size());
}

Tensor craft_adversarial(const Model& source, const Dataset& ds, const EvalAttack& attack) {
  attack.cfg.validate();
  Tensor out = ds.xs;
  std::size_t bi = 0;
  for (const Batch& b : batches(ds, kEvalBatch, false, 0)) {
    AttackConfig cfg = attack.cfg;
    cfg.seed = derive_seed(attack.cfg.seed, bi++);
    Tensor xa;
    switch (attack.kind) {
      case AttackKind::Fgsm:
        xa = fgsm(source, b.x, b.y, cfg.epsilon).x_adv;
        break;
      case AttackKind::PgdSat:
      case AttackKind::PgdTrades:
        xa = cfg.iters > 0 ? pgd({&source, nullptr}, b.x, b.y, cfg).x_adv : b.x;
        break;
      case AttackKind::Cw:
        xa = cfg.iters > 0 ? cw_linf(source, b.x, b.y, cfg).x_adv : b.x;
        break;
      case AttackKind::Square:
        xa = square_attack(make_oracle(source), ds.sample_shape(), b.x, b.y, cfg).x_adv;
        break;
    }
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      auto src = xa.row(i);
      std::copy(src.begin(), src.end(), out.row(b.indices[i]).begin());
    }
  }
  return out;
}

double robust_accuracy(const Model& model, const Dataset& ds, const EvalAttack& attack) {
  check_compatible(model, ds);
  Dataset adv = ds;
  adv.xs = craft_adversarial(model, ds, attack);
  return accuracy(model, adv);
}

MetricsRecord evaluate_attack(const std::string& model_id, const Model& model, const Dataset& ds,
                              const EvalAttack& attack) {
  return {model_id, attack.id, accuracy(model, ds), robust_accuracy(model, ds, attack), ds.size()};
}

MetricsRecord transfer_eval(const Model& surrogate, const Model& target, const Dataset& ds, const EvalAttack& attack,
                            const std::string& target_id) {
  if (attack.kind == AttackKind::Square) throw ConfigError("transfer evaluation needs a gradient attack");
  check_compatible(target, ds);
  check_compatible(surrogate, ds);
  Dataset adv = ds;
  adv.xs = craft_adversarial(surrogate, ds, attack);
  return {target_id, "transfer:" + attack.id, accuracy(target, ds), accuracy(target, adv), ds.size()};
}

void sort_records(std::vector<MetricsRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
    const auto ra = attack_rank(a.attack_id), rb = attack_rank(b.attack_id);
    if (ra != rb) return ra < rb;
    if (a.attack_id != b.attack_id) return a.attack_id < b.attack_id;
    return a.model_id < b.model_id;
  });
}

std::string records_to_csv(std::vector<MetricsRecord> records) {
  sort_records(records);
  std::string out = "model,attack,clean,robust,w_robust,n_samples\n";
  for (const auto& r : records) {
    out += r.model_id + ',' + r.attack_id + ',' + fixed2(r.clean_acc) + ',' + fixed2(r.robust_acc) + ',' +
           fixed2(r.w_robust()) + ',' + std::to_string(r.n_samples) + '\n';
  }
  return out;
}

std::vector<MetricsRecord> records_from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != "model,attack,clean,robust,w_robust,n_samples") {
    throw FormatError("metrics CSV header mismatch");
  }
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw FormatError("metrics CSV line " + std::to_string(lineno) + " needs 6 fields");
    MetricsRecord r;
    double w = 0.0;
    try {
      r.model_id = f[0];
      r.attack_id = f[1];
      r.clean_acc = std::stod(f[2]);
      r.robust_acc = std::stod(f[3]);
      w = std::stod(f[4]);
      r.n_samples = std::stoul(f[5]);
    } catch (const std::logic_error&) {
      throw FormatError("metrics CSV line " + std::to_string(lineno) + " has a malformed number");
    }
    for (double v : {r.clean_acc, r.robust_acc}) {
      if (!(v >= 0.0 && v <= 100.0)) throw FormatError("accuracy outside [0, 100] on line " + std::to_string(lineno));
    }
    if (std::fabs(w - r.w_robust()) > 0.01 + 1e-9) {
      throw FormatError("w_robust on line " + std::to_string(lineno) + " disagrees with (clean + robust) / 2");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string records_to_markdown(std::vector<MetricsRecord> records) {
  sort_records(records);
  const std::vector<std::string> head = {"Attack", "Defense", "Clean", "Robust", "W-Robust"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    rows.push_back({display_attack(r.attack_id), r.model_id, fixed2(r.clean_acc), fixed2(r.robust_acc),
                    fixed2(r.w_robust())});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = std::max<std::size_t>(head[c].size(), 3);
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto emit = [&](const std::vector<std::string>& cells) {
    std::string line = "|";
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string pad(width[c] - cells[c].size(), ' ');
      line += ' ' + (c < 2 ? cells[c] + pad : pad + cells[c]) + " |";
    }
    return line + '\n';
  };
  std::string out = emit(head);
  out += '|';
  for (std::size_t c = 0; c < head.size(); ++c) {
    out += c < 2 ? ' ' + std::string(width[c], '-') + " |" : ' ' + std::string(width[c] - 1, '-') + ": |";
  }
  out += '\n';
  for (const auto& row : rows) out += emit(row);
  return out;
}

}  // namespace ciard
