// SPDX-License-Identifier: Apache-2.0
#include "ciard/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ciard/errors.hpp"

namespace ciard {

namespace {

void check_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(0) == 0 || logits.dim(1) == 0) {
    throw ShapeError("expected non-empty [B, C] logits, got " + shape_to_string(logits.shape()));
  }
}

void check_labels(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits);
  if (labels.size() != logits.dim(0)) {
    throw LabelError("label count " + std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(logits.dim(0)));
  }
  const auto classes = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void check_pair(const Tensor& a, const Tensor& b) {
  check_logits(a);
  if (a.shape() != b.shape()) {
    throw ShapeError("logit shapes differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be > 0");
}

/// log_softmax(z / tau) of one row, in double.
void log_softmax_row(std::span<const float> z, double tau, std::vector<double>& out) {
  out.resize(z.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = static_cast<double>(z[k]) / tau;
    m = std::max(m, out[k]);
  }
  double s = 0.0;
  for (double v : out) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (auto& v : out) v -= lse;
}

/// KL(softmax(s/tau) || softmax(t/tau)) of one row. Writes dKL/ds and dKL/dt
/// (scaled by `g`) into the given rows when they are non-empty.
double kl_row(std::span<const float> s, std::span<const float> t, double tau, double g, std::span<float> ds,
              std::span<float> dt) {
  thread_local std::vector<double> ls, lt;
  log_softmax_row(s, tau, ls);
  log_softmax_row(t, tau, lt);
  const std::size_t c = s.size();
  double kl = 0.0;
  for (std::size_t k = 0; k < c; ++k) kl += std::exp(ls[k]) * (ls[k] - lt[k]);
  if (!ds.empty()) {
    // dKL/ds_k = p_k (d_k - KL) / tau with d_k = log p_k - log q_k
    for (std::size_t k = 0; k < c; ++k) {
      ds[k] += static_cast<float>(g * std::exp(ls[k]) * ((ls[k] - lt[k]) - kl) / tau);
    }
  }
  if (!dt.empty()) {
    for (std::size_t k = 0; k < c; ++k) dt[k] += static_cast<float>(g * (std::exp(lt[k]) - std::exp(ls[k])) / tau);
  }
  return std::max(kl, 0.0);
}

}  // namespace

void LossWeights::validate() const {
  if (!(w_nat >= 0.0 && w_nat <= 1.0)) throw ParameterError("w_nat must lie in [0, 1]");
  if (!(lambda_push >= 0.0)) throw ParameterError("lambda must be >= 0");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in [0, 1]");
  check_tau(tau_push);
  check_tau(tau_distill);
  if (l_nat_init && !(*l_nat_init >= 0.0)) throw ParameterError("l_nat_init must be >= 0");
  if (l_adv_init && !(*l_adv_init >= 0.0)) throw ParameterError("l_adv_init must be >= 0");
}

std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  std::vector<double> out(logits.dim(0));
  std::vector<double> lp;
  for (std::size_t i = 0; i < out.size(); ++i) {
    log_softmax_row(logits.row(i), 1.0, lp);
    out[i] = -lp[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto per = cross_entropy_per_sample(logits, labels);
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

LossGrad cross_entropy_grad(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  LossGrad out{0.0, Tensor(logits.shape()), {}};
  std::vector<double> lp;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    log_softmax_row(logits.row(i), 1.0, lp);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value -= lp[y];
    auto d = out.d_first.row(i);
    for (std::size_t k = 0; k < c; ++k) d[k] = static_cast<float>((std::exp(lp[k]) - (k == y ? 1.0 : 0.0)) * inv_b);
  }
  out.value *= inv_b;
  return out;
}

std::vector<double> kl_per_sample(const Tensor& student, const Tensor& teacher, double tau) {
  check_pair(student, teacher);
  check_tau(tau);
  std::vector<double> out(student.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kl_row(student.row(i), teacher.row(i), tau, 0.0, {}, {});
  return out;
}

double softened_kl(const Tensor& student, const Tensor& teacher, double tau, bool scale_by_tau2) {
  const auto per = kl_per_sample(student, teacher, tau);
  double s = 0.0;
  for (double v : per) s += v;
  s /= static_cast<double>(per.size());
  return scale_by_tau2 ? s * tau * tau : s;
}

LossGrad softened_kl_grad(const Tensor& student, const Tensor& teacher, double tau, bool scale_by_tau2) {
  check_pair(student, teacher);
  check_tau(tau);
  const std::size_t b = student.dim(0);
  const double scale = scale_by_tau2 ? tau * tau : 1.0;
  const double g = scale / static_cast<double>(b);
  LossGrad out{0.0, Tensor(student.shape()), Tensor(teacher.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    out.value += kl_row(student.row(i), teacher.row(i), tau, g, out.d_first.row(i), out.d_second.row(i));
  }
  out.value *= g;
  return out;
}

LossGrad push_loss_grad(const Tensor& teacher, const Tensor& student, std::span<const int> labels, double tau) {
  check_pair(teacher, student);
  check_labels(teacher, labels);
  check_tau(tau);
  const auto pred = argmax_rows(teacher);
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != labels[i]) wrong.push_back(i);
  }
  LossGrad out{0.0, Tensor(student.shape()), {}};
  if (wrong.empty()) return out;
  const double g = 1.0 / static_cast<double>(wrong.size());
  for (std::size_t i : wrong) out.value += kl_row(student.row(i), teacher.row(i), tau, g, out.d_first.row(i), {});
  out.value *= g;
  return out;
}

double push_loss(const Tensor& teacher, const Tensor& student, std::span<const int> labels, double tau) {
  return push_loss_grad(teacher, student, labels, tau).value;
}

LossWeights adaptive_weight_update(const LossWeights& w, double l_nat, double l_adv) {
  if (!w.l_nat_init || !w.l_adv_init) throw ParameterError("adaptive weight update needs recorded initial losses");
  if (!(l_nat >= 0.0) || !(l_adv >= 0.0)) throw ParameterError("losses must be >= 0");
  const double n0 = *w.l_nat_init, a0 = *w.l_adv_init;
  if (!(n0 > 0.0) && !(a0 > 0.0)) throw ParameterError("at least one initial loss must be > 0");
  // A zero normaliser maps its term to zero rather than dividing by zero.
  const double nat_hat = n0 > 0.0 ? l_nat / n0 : 0.0;
  const double adv_hat = a0 > 0.0 ? l_adv / a0 : 0.0;
  const double denom = nat_hat + adv_hat;
  if (!(denom > 0.0) || !std::isfinite(denom)) return w;
  const double target = nat_hat / denom;
  LossWeights out = w;
  out.w_nat = std::clamp(w.w_nat - w.eta * (w.w_nat - target), 0.0, 1.0);
  return out;
}

StudentLoss student_total_loss(const Tensor& s_clean, const Tensor& t_nat_clean, const Tensor& s_adv,
                               const Tensor& t_adv_adv, const Tensor& t_nat_adv, std::span<const int> labels,
                               const LossWeights& w) {
  check_pair(s_clean, t_nat_clean);
  check_pair(s_clean, s_adv);
  check_pair(s_adv, t_adv_adv);
  check_pair(s_adv, t_nat_adv);

  LossGrad nat = softened_kl_grad(s_clean, t_nat_clean, w.tau_distill, w.scale_by_tau2);
  LossGrad adv = softened_kl_grad(s_adv, t_adv_adv, w.tau_distill, w.scale_by_tau2);
  LossGrad push = push_loss_grad(t_nat_adv, s_adv, labels, w.tau_push);

  StudentLoss out;
  auto& c = out.components;
  c.l_nat = nat.value;
  c.l_adv = adv.value;
  c.l_push = push.value;
  double push_scale = w.lambda_push;
  if (w.clamp_push && c.l_push > 0.0) {
    const double cap = std::max(c.l_nat, c.l_adv);
    if (w.lambda_push * c.l_push > cap) push_scale = cap / c.l_push;
  }
  c.push_term = push_scale * c.l_push;
  const double wn = w.w_nat, wa = w.w_adv();
  c.l_student = wa * c.l_adv + wn * c.l_nat - c.push_term;

  out.d_student_clean = std::move(nat.d_first);
  for (auto& v : out.d_student_clean.data()) v = static_cast<float>(wn * v);
  out.d_student_adv = Tensor(s_adv.shape());
  for (std::size_t i = 0; i < s_adv.numel(); ++i) {
    out.d_student_adv[i] = static_cast<float>(wa * adv.d_first[i] - push_scale * push.d_first[i]);
  }
  return out;
}

double teacher_loss(const Tensor& t_adv_logits_on_adv, std::span<const int> labels) {
  return cross_entropy(t_adv_logits_on_adv, labels);
}

LossGrad teacher_loss_grad(const Tensor& t_adv_logits_on_adv, std::span<const int> labels) {
  return cross_entropy_grad(t_adv_logits_on_adv, labels);
}

double margin(std::span<const float> logits, int label) {
  const auto y = static_cast<std::size_t>(label);
  if (y >= logits.size()) throw LabelError("label outside logit range");
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != y) other = std::max(other, static_cast<double>(logits[k]));
  }
  return other - static_cast<double>(logits[y]);
}

}  // namespace ciard
