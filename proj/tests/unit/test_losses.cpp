// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ciard/errors.hpp"
#include "ciard/losses.hpp"
#include "helpers.hpp"
#include "oracle/gradcheck.hpp"

using namespace ciard;

namespace {

/// Central differences of a scalar function of a logit tensor.
template <class F>
ref::CheckStats check_logit_grad(const Tensor& z, const Tensor& analytic, F f) {
  ref::CheckStats st;
  std::vector<ref::Vec> rows = ref::rows_of(z);
  const std::size_t c = z.dim(1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double num = ref::central(rows[i], k, 1e-3, [&] { return f(rows); });
      st.add(analytic.at(i, k), num, 1e-3);
    }
  }
  return st;
}

LossWeights weights_with_init(double w_nat, double eta) {
  LossWeights w;
  w.w_nat = w_nat;
  w.eta = eta;
  w.l_nat_init = 1.0;
  w.l_adv_init = 1.0;
  return w;
}

}  // namespace

TEST_CASE("cross entropy values") {
  CHECK(cross_entropy(Tensor(Shape{3, 10}), Labels{0, 4, 9}) == doctest::Approx(std::log(10.0)).epsilon(1e-9));
  CHECK(cross_entropy(Tensor::from_rows({{30, 0, 0}}), Labels{0}) < 1e-9);
  CHECK(cross_entropy(Tensor::from_rows({{1, 0}}), Labels{0}) == doctest::Approx(0.313262).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(Tensor::from_rows({{1, 0}}), Labels{2}), LabelError);
  CHECK_THROWS_AS(cross_entropy(Tensor::from_rows({{1, 0}}), Labels{-1}), LabelError);
}

TEST_CASE("cross entropy gradient is (softmax - onehot) / B") {
  const Tensor z = testing::random_tensor({4, 3}, 2, -3, 3);
  const Labels y = {2, 0, 1, 1};
  const auto g = cross_entropy_grad(z, y);
  CHECK(g.value == doctest::Approx(cross_entropy(z, y)));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto lp = ref::log_softmax(ref::sample_of(z, i), 1.0);
    for (std::size_t k = 0; k < 3; ++k) {
      const double want = (std::exp(lp[k]) - (static_cast<int>(k) == y[i] ? 1.0 : 0.0)) / 4.0;
      CHECK(g.d_first.at(i, k) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("softened KL values") {
  const Tensor s = Tensor::from_rows({{1, 0}}), t = Tensor::from_rows({{0, 1}});
  CHECK(softened_kl(s, s, 1.0, false) == doctest::Approx(0.0));
  CHECK(softened_kl(s, t, 1.0, false) == doctest::Approx(0.462117).epsilon(1e-6));
  CHECK(softened_kl(s, t, 2.0, true) == doctest::Approx(4.0 * ref::kl({1, 0}, {0, 1}, 2.0)).epsilon(1e-9));
  CHECK_THROWS_AS(softened_kl(s, t, 0.0, false), ParameterError);
  CHECK_THROWS_AS(softened_kl(s, Tensor(Shape{1, 3}), 1.0, false), ShapeError);
}

TEST_CASE("softened KL flattens as the temperature grows") {
  const Tensor s = testing::random_tensor({3, 5}, 1, -4, 4), t = testing::random_tensor({3, 5}, 2, -4, 4);
  double prev = softened_kl(s, t, 1.0, false);
  for (double tau : {2.0, 5.0, 10.0, 100.0, 1000.0}) {
    const double v = softened_kl(s, t, tau, false);
    CHECK(v <= prev + 1e-12);
    prev = v;
  }
  CHECK(softened_kl(s, t, 1e4, false) < 1e-6);
}

TEST_CASE("softened KL is shift invariant and non-negative") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor s = testing::random_tensor({4, 6}, seed, -5, 5), t = testing::random_tensor({4, 6}, seed + 1000, -5, 5);
    const double base = softened_kl(s, t, 2.0, true);
    CHECK(base >= 0.0);
    ciard::Rng rng(seed);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto cs = static_cast<float>(rng.uniform(-10, 10)), ct = static_cast<float>(rng.uniform(-10, 10));
      for (auto& v : s.row(i)) v += cs;
      for (auto& v : t.row(i)) v += ct;
    }
    CHECK(softened_kl(s, t, 2.0, true) == doctest::Approx(base).epsilon(1e-5));
  }
}

TEST_CASE("softened KL gradients match finite differences") {
  const Tensor s = testing::random_tensor({5, 4}, 3, -3, 3), t = testing::random_tensor({5, 4}, 4, -3, 3);
  for (double tau : {1.0, 4.0}) {
    const auto g = softened_kl_grad(s, t, tau, true);
    CHECK(g.value == doctest::Approx(softened_kl(s, t, tau, true)));
    const auto ts = ref::rows_of(t), ss = ref::rows_of(s);
    CHECK(check_logit_grad(s, g.d_first, [&](const auto& r) { return ref::mean_kl(r, ts, tau, true); }).pass_rate() ==
          1.0);
    CHECK(check_logit_grad(t, g.d_second, [&](const auto& r) { return ref::mean_kl(ss, r, tau, true); }).pass_rate() ==
          1.0);
  }
}

TEST_CASE("push loss: empty error set is exactly zero") {
  const Tensor teacher = Tensor::from_rows({{3, 0}, {0, 2}, {5, 1}});
  const Tensor student = testing::random_tensor({3, 2}, 5);
  const Labels y = {0, 1, 0};
  CHECK(push_loss(teacher, student, y) == 0.0);
  const auto g = push_loss_grad(teacher, student, y);
  for (float v : g.d_first.data()) CHECK(v == 0.0f);
}

TEST_CASE("push loss: teacher wrong everywhere equals full-batch KL at tau 4") {
  const Tensor teacher = Tensor::from_rows({{0, 3, 1}, {2, 0, 1}, {0, 0, 4}});
  const Tensor student = testing::random_tensor({3, 3}, 6, -2, 2);
  const Labels y = {0, 1, 1};
  CHECK(push_loss(teacher, student, y) == doctest::Approx(softened_kl(student, teacher, 4.0, false)).epsilon(1e-9));
}

TEST_CASE("push loss: batch of 4 with 2 teacher errors") {
  const Tensor teacher = Tensor::from_rows({{2, 0, 0}, {0, 2, 0}, {0, 0, 2}, {1, 3, 0}});
  const Tensor student = Tensor::from_rows({{0.5f, 0.1f, -1}, {1, 0, 2}, {0, 1, 0}, {2, -1, 0.5f}});
  const Labels y = {0, 2, 2, 0};  // rows 1 and 3 are teacher errors
  double want = 0.0;
  for (std::size_t i : {1u, 3u}) want += ref::kl(ref::sample_of(student, i), ref::sample_of(teacher, i), 4.0);
  CHECK(push_loss(teacher, student, y) == doctest::Approx(want / 2).epsilon(1e-9));

  const auto g = push_loss_grad(teacher, student, y);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(g.d_first.at(0, k) == 0.0f);
    CHECK(g.d_first.at(2, k) == 0.0f);
  }
  const auto tr = ref::rows_of(teacher);
  const std::vector<int> yy(y.begin(), y.end());
  CHECK(check_logit_grad(student, g.d_first, [&](const auto& r) { return ref::push(tr, r, yy, 4.0); }).pass_rate() ==
        1.0);
}

TEST_CASE("adaptive weights") {
  SUBCASE("hand value") {
    LossWeights w = weights_with_init(0.5, 0.025);
    w = adaptive_weight_update(w, 0.7, 0.0);
    CHECK(w.w_nat == doctest::Approx(0.5125).epsilon(1e-15));
    CHECK(w.w_adv() == doctest::Approx(0.4875).epsilon(1e-15));
  }
  SUBCASE("symmetric fixed point") {
    LossWeights w = weights_with_init(0.5, 0.025);
    w.l_nat_init = 2.0;
    w.l_adv_init = 4.0;
    CHECK(adaptive_weight_update(w, 1.0, 2.0).w_nat == 0.5);
  }
  SUBCASE("degenerate batch leaves weights unchanged") {
    LossWeights w = weights_with_init(0.3, 0.025);
    CHECK(adaptive_weight_update(w, 0.0, 0.0).w_nat == 0.3);
  }
  SUBCASE("normalisers must be recorded") {
    LossWeights w;
    CHECK_THROWS_AS(adaptive_weight_update(w, 1.0, 1.0), ParameterError);
  }
  SUBCASE("random sequences keep a convex pair") {
    ciard::Rng rng(1);
    for (int seq = 0; seq < 200; ++seq) {
      LossWeights w = weights_with_init(rng.uniform(), rng.uniform(0.001, 0.999));
      w.l_nat_init = rng.uniform(0.01, 5);
      w.l_adv_init = rng.uniform(0.01, 5);
      for (int k = 0; k < 50; ++k) {
        w = adaptive_weight_update(w, rng.uniform(0, 10), rng.uniform(0, 10));
        CHECK(w.w_nat >= 0.0);
        CHECK(w.w_nat <= 1.0);
        CHECK(std::fabs(w.w_nat + w.w_adv() - 1.0) <= std::numeric_limits<double>::epsilon());
      }
    }
  }
}

TEST_CASE("student loss recombines its components") {
  const Tensor s_c = testing::random_tensor({6, 3}, 1, -2, 2), tn_c = testing::random_tensor({6, 3}, 2, -2, 2);
  const Tensor s_a = testing::random_tensor({6, 3}, 3, -2, 2), ta_a = testing::random_tensor({6, 3}, 4, -2, 2);
  const Tensor tn_a = testing::random_tensor({6, 3}, 5, -2, 2);
  const Labels y = testing::random_labels(6, 3, 6);
  LossWeights w;
  w.w_nat = 0.3;
  w.lambda_push = 1.2;
  const auto r = student_total_loss(s_c, tn_c, s_a, ta_a, tn_a, y, w);
  const auto& c = r.components;
  CHECK(c.l_nat == doctest::Approx(softened_kl(s_c, tn_c, 1.0, true)));
  CHECK(c.l_adv == doctest::Approx(softened_kl(s_a, ta_a, 1.0, true)));
  CHECK(c.l_push == doctest::Approx(push_loss(tn_a, s_a, y, 4.0)));
  CHECK(std::fabs(c.l_student - (0.7 * c.l_adv + 0.3 * c.l_nat - 1.2 * c.l_push)) < 1e-6);
  CHECK(c.l_push > 0.0);

  ref::StudentTerms terms;
  terms.w_nat = 0.3;
  terms.lambda = 1.2;
  const auto R = ref::rows_of;
  const std::vector<int> yy(y.begin(), y.end());
  CHECK(c.l_student ==
        doctest::Approx(ref::student_loss(R(s_c), R(tn_c), R(s_a), R(ta_a), R(tn_a), yy, terms)).epsilon(1e-6));
  CHECK(check_logit_grad(s_c, r.d_student_clean, [&](const auto& rows) {
          return ref::student_loss(rows, R(tn_c), R(s_a), R(ta_a), R(tn_a), yy, terms);
        }).pass_rate() == 1.0);
  CHECK(check_logit_grad(s_a, r.d_student_adv, [&](const auto& rows) {
          return ref::student_loss(R(s_c), R(tn_c), rows, R(ta_a), R(tn_a), yy, terms);
        }).pass_rate() == 1.0);
}

TEST_CASE("student loss: zero when the student copies both teachers and lambda is 0") {
  const Tensor z = testing::random_tensor({4, 3}, 7);
  LossWeights w;
  w.lambda_push = 0.0;
  const auto r = student_total_loss(z, z, z, z, z, testing::random_labels(4, 3, 1), w);
  CHECK(r.components.l_student == doctest::Approx(0.0));
}

TEST_CASE("student loss: clamped push term") {
  const Tensor s = Tensor::from_rows({{5, -5}}), t = Tensor::from_rows({{-5, 5}});
  LossWeights w;
  w.clamp_push = true;
  w.lambda_push = 100.0;
  const auto r = student_total_loss(s, s, s, s, t, Labels{0}, w);
  CHECK(r.components.l_nat == 0.0);
  CHECK(r.components.push_term == doctest::Approx(0.0));
  w.clamp_push = false;
  const auto u = student_total_loss(s, s, s, s, t, Labels{0}, w);
  CHECK(u.components.push_term == doctest::Approx(100.0 * u.components.l_push));
}

TEST_CASE("teacher loss mirrors cross entropy") {
  const Tensor z = testing::random_tensor({3, 4}, 9);
  const Labels y = {1, 2, 3};
  CHECK(teacher_loss(z, y) == cross_entropy(z, y));
  CHECK(teacher_loss(Tensor(Shape{2, 10}), Labels{0, 1}) == doctest::Approx(std::log(10.0)));
}

TEST_CASE("margin") {
  const std::vector<float> z = {2, 1};
  CHECK(margin(z, 0) == doctest::Approx(-1.0));
  CHECK(margin(z, 1) == doctest::Approx(1.0));
}
