// SPDX-License-Identifier: Apache-2.0
#include "ciard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ciard/errors.hpp"
#include "ciard/rng.hpp"

namespace ciard {

namespace {

struct ObjectiveEval {
  std::vector<double> values;
  Tensor input_grad;
};

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void check_batch(const Tensor& x, std::span<const int> labels) {
  if (x.rank() < 2 || x.dim(0) == 0) throw ShapeError("attack input must be a non-empty batch");
  if (labels.size() != x.dim(0)) throw LabelError("label count does not match attack batch");
}

ObjectiveEval evaluate(const AttackModels& m, const Tensor& x_eval, const Tensor& ref_logits,
                       std::span<const int> labels, const AttackConfig& cfg, bool need_grad) {
  ObjectiveEval out;
  ForwardTape tape = forward_with_tape(*m.student, x_eval);
  const Tensor& s = tape.logits;
  const std::size_t batch = s.dim(0), classes = s.dim(1);
  Tensor ds;

  switch (cfg.objective) {
    case AttackObjective::CeLabel: {
      out.values = cross_entropy_per_sample(s, labels);
      if (need_grad) ds = cross_entropy_grad(s, labels).d_first;
      break;
    }
    case AttackObjective::KlSelf: {
      out.values = kl_per_sample(s, ref_logits, cfg.kl_tau);
      if (need_grad) ds = softened_kl_grad(s, ref_logits, cfg.kl_tau, false).d_first;
      break;
    }
    case AttackObjective::KlJoint: {
      ForwardTape t_tape = forward_with_tape(*m.clean_teacher, x_eval);
      out.values = kl_per_sample(s, t_tape.logits, cfg.kl_tau);
      if (need_grad) {
        LossGrad g = softened_kl_grad(s, t_tape.logits, cfg.kl_tau, false);
        ds = std::move(g.d_first);
        Backprop bs = backward(*m.student, tape, ds);
        Backprop bt = backward(*m.clean_teacher, t_tape, g.d_second);
        bs.input_grad += bt.input_grad;
        out.input_grad = std::move(bs.input_grad);
      }
      return out;
    }
    case AttackObjective::CwMargin: {
      out.values.resize(batch);
      if (need_grad) ds = Tensor(s.shape());
      for (std::size_t i = 0; i < batch; ++i) {
        auto row = s.row(i);
        const double mg = margin(row, labels[i]);
        out.values[i] = std::min(mg, cfg.kappa);
        if (need_grad && mg < cfg.kappa) {
          const auto y = static_cast<std::size_t>(labels[i]);
          std::size_t best = y == 0 ? 1 : 0;
          for (std::size_t k = 0; k < classes; ++k) {
            if (k != y && row[k] > row[best]) best = k;
          }
          ds.at(i, best) += 1.0f;
          ds.at(i, y) -= 1.0f;
        }
      }
      break;
    }
  }
  if (need_grad) out.input_grad = backward(*m.student, tape, ds).input_grad;
  return out;
}

void check_models(const AttackModels& m, const AttackConfig& cfg) {
  if (!m.student) throw ConfigError("attack needs a student model");
  if (cfg.objective == AttackObjective::KlJoint && !m.clean_teacher) {
    throw ConfigError("KL_JOINT objective needs the clean teacher");
  }
}

Tensor clean_reference(const AttackModels& m, const Tensor& x, const AttackConfig& cfg) {
  return cfg.objective == AttackObjective::KlSelf ? forward(*m.student, x) : Tensor();
}

void copy_row(Tensor& dst, const Tensor& src, std::size_t i) {
  auto d = dst.row(i);
  auto s = src.row(i);
  std::copy(s.begin(), s.end(), d.begin());
}

}  // namespace

std::string objective_name(AttackObjective o) {
  switch (o) {
    case AttackObjective::CeLabel: return "ce_label";
    case AttackObjective::KlSelf: return "kl_self";
    case AttackObjective::KlJoint: return "kl_joint";
    case AttackObjective::CwMargin: return "cw_margin";
  }
  return "unknown";
}

AttackObjective parse_objective(const std::string& name) {
  if (name == "ce_label" || name == "ce") return AttackObjective::CeLabel;
  if (name == "kl_self") return AttackObjective::KlSelf;
  if (name == "kl_joint") return AttackObjective::KlJoint;
  if (name == "cw_margin" || name == "cw") return AttackObjective::CwMargin;
  throw ConfigError("unknown attack objective '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
  if (iters < 0) throw ConfigError("iters must be >= 0");
  if (iters > 0 && epsilon > 0.0 && !(step > 0.0)) throw ConfigError("step must be > 0 when iters > 0 and epsilon > 0");
  if (query_budget < 0) throw ConfigError("query budget must be >= 0");
  if (!(kl_tau > 0.0)) throw ConfigError("kl_tau must be > 0");
}

AttackConfig AttackConfig::training() { return AttackConfig{}; }

AttackConfig AttackConfig::pgd_sat() {
  AttackConfig c;
  c.iters = 20;
  return c;
}

AttackConfig AttackConfig::pgd_trades() {
  AttackConfig c = pgd_sat();
  c.objective = AttackObjective::KlSelf;
  return c;
}

AttackConfig AttackConfig::cw() {
  AttackConfig c;
  c.iters = 30;
  c.objective = AttackObjective::CwMargin;
  return c;
}

AttackConfig AttackConfig::square() {
  AttackConfig c;
  c.iters = 0;
  c.rand_init = false;
  c.query_budget = 100;
  return c;
}

int AdvBatch::max_queries() const {
  return queries_used.empty() ? 0 : *std::max_element(queries_used.begin(), queries_used.end());
}

Tensor project(const Tensor& x_adv, const Tensor& x_ref, double epsilon) {
  if (x_adv.shape() != x_ref.shape()) throw ShapeError("project: shape mismatch");
  Tensor out(x_adv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double ref = x_ref[i];
    const double lo = std::max(ref - epsilon, 0.0);
    const double hi = std::min(ref + epsilon, 1.0);
    out[i] = static_cast<float>(std::clamp(static_cast<double>(x_adv[i]), lo, hi));
  }
  return out;
}

std::vector<double> attack_objective(const AttackModels& models, const Tensor& x_eval, const Tensor& x_ref,
                                     std::span<const int> labels, const AttackConfig& cfg) {
  check_models(models, cfg);
  check_batch(x_eval, labels);
  return evaluate(models, x_eval, clean_reference(models, x_ref, cfg), labels, cfg, false).values;
}

AdvBatch fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double epsilon) {
  check_batch(x, labels);
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  std::vector<double> start;
  const Gradients g = gradients(model, x, [&](const Tensor& logits) {
    start = cross_entropy_per_sample(logits, labels);
    LossGrad ce = cross_entropy_grad(logits, labels);
    return ObjectiveValue{ce.value, std::move(ce.d_first)};
  });
  Tensor stepped = x;
  for (std::size_t i = 0; i < stepped.numel(); ++i) {
    stepped[i] = static_cast<float>(stepped[i] + epsilon * sign(g.input_grad[i]));
  }
  stepped = project(stepped, x, epsilon);
  const auto after = cross_entropy_per_sample(forward(model, stepped), labels);

  // A sample keeps the clean point if the signed step did not raise its loss.
  AdvBatch out{x, x, start, {}, {}};
  for (std::size_t i = 0; i < after.size(); ++i) {
    if (after[i] > start[i]) {
      copy_row(out.x_adv, stepped, i);
      out.achieved_objective[i] = after[i];
    }
  }
  return out;
}

AdvBatch pgd(const AttackModels& models, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_models(models, cfg);
  check_batch(x, labels);
  if (cfg.iters < 1) throw ConfigError("pgd needs iters >= 1");

  Tensor cur = x;
  if (cfg.rand_init && cfg.epsilon > 0.0) {
    const std::size_t per = x.row_size();
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      Rng rng(derive_seed(cfg.seed, i));
      auto r = cur.row(i);
      for (std::size_t k = 0; k < per; ++k) r[k] = static_cast<float>(r[k] + rng.uniform(-cfg.epsilon, cfg.epsilon));
    }
    cur = project(cur, x, cfg.epsilon);
  }
  const Tensor ref = clean_reference(models, x, cfg);

  ObjectiveEval ev = evaluate(models, cur, ref, labels, cfg, true);
  AdvBatch out{cur, x, ev.values, {}, {}};
  for (int it = 1; it <= cfg.iters; ++it) {
    for (std::size_t i = 0; i < cur.numel(); ++i) {
      cur[i] = static_cast<float>(cur[i] + cfg.step * sign(ev.input_grad[i]));
    }
    cur = project(cur, x, cfg.epsilon);
    ev = evaluate(models, cur, ref, labels, cfg, it < cfg.iters);
    for (std::size_t i = 0; i < ev.values.size(); ++i) {
      if (ev.values[i] > out.achieved_objective[i]) {
        out.achieved_objective[i] = ev.values[i];
        copy_row(out.x_adv, cur, i);
      }
    }
  }
  return out;
}

AdvBatch cw_linf(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.objective = AttackObjective::CwMargin;
  return pgd(AttackModels{&model, nullptr}, x, labels, c);
}

LogitOracle make_oracle(const Model& model) {
  return [&model](const Tensor& x) { return forward(model, x); };
}

double square_fraction(int done, int budget, double p_init) {
  if (budget <= 0) return p_init;
  // Canonical schedule is written for 10k iterations; rescale the progress.
  const int it = static_cast<int>(static_cast<double>(done) / budget * 10000.0);
  if (it <= 10) return p_init;
  if (it <= 50) return p_init / 2;
  if (it <= 200) return p_init / 4;
  if (it <= 500) return p_init / 8;
  if (it <= 1000) return p_init / 16;
  if (it <= 2000) return p_init / 32;
  if (it <= 4000) return p_init / 64;
  if (it <= 6000) return p_init / 128;
  if (it <= 8000) return p_init / 256;
  return p_init / 512;
}

AdvBatch square_attack(const LogitOracle& oracle, const Shape& sample_shape, const Tensor& x,
                       std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_batch(x, labels);
  if (shape_numel(sample_shape) != x.row_size()) throw ShapeError("square attack: sample shape mismatch");

  // Vector inputs are treated as a 1 x 1 x D image.
  std::size_t ch = 1, h = 1, w = shape_numel(sample_shape);
  if (sample_shape.size() == 3) {
    ch = sample_shape[0];
    h = sample_shape[1];
    w = sample_shape[2];
  }
  const std::size_t per = x.row_size();
  const float eps = static_cast<float>(cfg.epsilon);
  const int budget = cfg.query_budget;

  AdvBatch out{x, x, std::vector<double>(x.dim(0), -std::numeric_limits<double>::infinity()),
               std::vector<int>(x.dim(0), 0), std::vector<std::vector<double>>(x.dim(0))};

  Shape one = sample_shape;
  one.insert(one.begin(), 1);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    Rng rng(derive_seed(cfg.seed, n));
    const int y = labels[n];
    int& queries = out.queries_used[n];
    auto xr = x.row(n);
    const std::vector<float> base(xr.begin(), xr.end());

    auto query = [&](const std::vector<float>& v, bool& fooled) {
      ++queries;
      Tensor logits = oracle(Tensor(one, v));
      fooled = argmax_rows(logits)[0] != y;
      return margin(logits.row(0), y);
    };
    auto clip = [&](std::vector<float>& v, const std::vector<float>& delta) {
      for (std::size_t k = 0; k < per; ++k) {
        v[k] = std::clamp(base[k] + delta[k], std::max(base[k] - eps, 0.0f), std::min(base[k] + eps, 1.0f));
      }
    };

    if (budget == 0) continue;
    bool fooled = false;
    double best = query(base, fooled);
    out.achieved_objective[n] = best;
    if (fooled || queries >= budget || cfg.epsilon == 0.0) continue;

    // Vertical stripes: one random sign per (channel, column).
    std::vector<float> delta(per);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t col = 0; col < w; ++col) {
        const float s = rng.bernoulli(0.5) ? eps : -eps;
        for (std::size_t r = 0; r < h; ++r) delta[(c * h + r) * w + col] = s;
      }
    }
    std::vector<float> cur(per);
    clip(cur, delta);
    best = query(cur, fooled);
    out.accepted_trace[n].push_back(best);

    const int start_queries = queries;
    while (!fooled && queries < budget) {
      const double p = square_fraction(queries - start_queries, budget);
      auto side = static_cast<std::size_t>(std::lround(std::sqrt(p * static_cast<double>(h * w))));
      side = std::clamp<std::size_t>(side, 1, std::min(h, w));
      const std::size_t r0 = rng.below(h - side + 1), c0 = rng.below(w - side + 1);

      std::vector<float> proposal = delta;
      std::vector<float> cand(per);
      for (int attempt = 0; attempt < 10; ++attempt) {
        for (std::size_t c = 0; c < ch; ++c) {
          const float s = rng.bernoulli(0.5) ? eps : -eps;
          for (std::size_t r = r0; r < r0 + side; ++r) {
            for (std::size_t q = c0; q < c0 + side; ++q) proposal[(c * h + r) * w + q] = s;
          }
        }
        clip(cand, proposal);
        if (cand != cur) break;
      }
      bool cand_fooled = false;
      const double value = query(cand, cand_fooled);
      if (value > best) {
        best = value;
        delta = std::move(proposal);
        cur = std::move(cand);
        fooled = cand_fooled;
        out.accepted_trace[n].push_back(best);
      }
    }
    out.achieved_objective[n] = best;
    std::copy(cur.begin(), cur.end(), out.x_adv.row(n).begin());
  }
  return out;
}

}  // namespace ciard
