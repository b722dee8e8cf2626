// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar objectives for dual-teacher robust distillation.
//
// KL terms are always KL(student || teacher) = sum_k p_s,k * log(p_s,k / p_t,k),
// with p = softmax(z / tau), averaged over the batch. Every loss returns its
// value in double precision together with analytic gradients w.r.t. the logits.

#include <optional>
#include <span>
#include <vector>

#include "ciard/tensor.hpp"

namespace ciard {

using Labels = std::vector<int>;

struct LossWeights {
  double w_nat = 0.5;           // w_adv is derived as 1 - w_nat
  double lambda_push = 1.0;
  double eta = 0.025;           // step size of the adaptive weight update
  double tau_push = 4.0;
  double tau_distill = 1.0;
  bool scale_by_tau2 = true;    // multiplies the two distillation KL terms by tau^2
  bool clamp_push = false;      // caps lambda * l_push at max(l_nat, l_adv)
  std::optional<double> l_nat_init;
  std::optional<double> l_adv_init;

  double w_adv() const noexcept { return 1.0 - w_nat; }
  /// Throws ParameterError when fields break their ranges.
  void validate() const;
};

struct LossComponents {
  double l_nat = 0.0;
  double l_adv = 0.0;
  double l_push = 0.0;
  double push_term = 0.0;  // amount subtracted from l_student (lambda * l_push unless clamped)
  double l_student = 0.0;
  double l_adv_teacher = 0.0;
};

/// Loss value with gradients w.r.t. the first (student) and second (teacher) logit tensors.
struct LossGrad {
  double value = 0.0;
  Tensor d_first;
  Tensor d_second;
};

// --- cross entropy --------------------------------------------------------

double cross_entropy(const Tensor& logits, std::span<const int> labels);
LossGrad cross_entropy_grad(const Tensor& logits, std::span<const int> labels);
std::vector<double> cross_entropy_per_sample(const Tensor& logits, std::span<const int> labels);

// --- temperature-softened KL ----------------------------------------------

double softened_kl(const Tensor& student, const Tensor& teacher, double tau, bool scale_by_tau2);
LossGrad softened_kl_grad(const Tensor& student, const Tensor& teacher, double tau, bool scale_by_tau2);
/// Unscaled KL for every row.
std::vector<double> kl_per_sample(const Tensor& student, const Tensor& teacher, double tau);

// --- contrastive push loss --------------------------------------------------

/// Mean KL(student/tau || teacher/tau) over the rows the teacher misclassifies;
/// zero when the teacher is right everywhere.
double push_loss(const Tensor& teacher, const Tensor& student, std::span<const int> labels, double tau = 4.0);
/// d_first is the gradient w.r.t. the student logits.
LossGrad push_loss_grad(const Tensor& teacher, const Tensor& student, std::span<const int> labels, double tau = 4.0);

// --- weighting and composite objectives -----------------------------------

/// Moves w_nat a step of size eta toward L_nat_hat / (L_nat_hat + L_adv_hat),
/// where L_hat are the losses divided by their recorded initial values.
/// Leaves the weights unchanged when both normalised losses are zero.
LossWeights adaptive_weight_update(const LossWeights& w, double l_nat, double l_adv);

struct StudentLoss {
  LossComponents components;
  Tensor d_student_clean;  // gradient of l_student w.r.t. student(x)
  Tensor d_student_adv;    // gradient of l_student w.r.t. student(x*)
};

/// l_student = w_adv * KL(s(x*) || t_adv(x*)) + w_nat * KL(s(x) || t_nat(x)) - lambda * Push(t_nat(x*), s(x*)).
StudentLoss student_total_loss(const Tensor& s_clean, const Tensor& t_nat_clean, const Tensor& s_adv,
                               const Tensor& t_adv_adv, const Tensor& t_nat_adv, std::span<const int> labels,
                               const LossWeights& w);

/// Robust-teacher retraining loss: CE of the robust teacher on adversarial inputs.
double teacher_loss(const Tensor& t_adv_logits_on_adv, std::span<const int> labels);
LossGrad teacher_loss_grad(const Tensor& t_adv_logits_on_adv, std::span<const int> labels);

/// CW-style margin: max_{j != y} z_j - z_y.
double margin(std::span<const float> logits, int label);

}  // namespace ciard
