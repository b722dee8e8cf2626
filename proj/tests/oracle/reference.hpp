// SPDX-License-Identifier: Apache-2.0
#pragma once
// Double-precision reference implementations used as test oracles. Nothing
// here calls into the library's forward, backward or loss code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "ciard/nn.hpp"

namespace ref {

using Vec = std::vector<double>;

/// Parameters copied out of a model as flat double arrays, in ParamSet order.
struct Params {
  std::vector<Vec> tensors;
  std::vector<ciard::Shape> shapes;
};

inline Params params_of(const ciard::Model& m) {
  Params p;
  for (const auto& nt : m.params()) {
    p.tensors.emplace_back(nt.value.vec().begin(), nt.value.vec().end());
    p.shapes.push_back(nt.value.shape());
  }
  return p;
}

inline Vec sample_of(const ciard::Tensor& x, std::size_t i) {
  const auto r = x.row(i);
  return Vec(r.begin(), r.end());
}

inline Vec linear(const Vec& in, const Vec& w, const Vec& b) {
  const std::size_t out = b.size(), n = in.size();
  Vec y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b[o];
    for (std::size_t k = 0; k < n; ++k) s += w[o * n + k] * in[k];
    y[o] = s;
  }
  return y;
}

/// Activation pattern (ReLU signs, max-pool winners) of the forward passes run
/// while recording is on. Two evaluations with different patterns straddle a
/// non-differentiable point.
struct Pattern {
  bool recording = false;
  std::vector<std::size_t> marks;
};

inline Pattern& pattern() {
  static thread_local Pattern p;
  return p;
}

inline void relu(Vec& v) {
  Pattern& pt = pattern();
  for (double& e : v) {
    if (pt.recording) pt.marks.push_back(e > 0.0);
    e = e > 0.0 ? e : 0.0;
  }
}

/// 3x3 convolution, zero padding 1, stride 1. x is [cin, h, w].
inline Vec conv3(const Vec& x, std::size_t cin, std::size_t h, std::size_t w, const Vec& k, const Vec& b) {
  const std::size_t cout = b.size();
  Vec y(cout * h * w);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < cin; ++i) {
          for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
              const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
              s += k[((o * cin + i) * 3 + (dr + 1)) * 3 + (dc + 1)] * x[(i * h + rr) * w + cc];
            }
          }
        }
        y[(o * h + r) * w + c] = s;
      }
    }
  }
  return y;
}

inline Vec maxpool2(const Vec& x, std::size_t ch, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  Vec y(ch * oh * ow);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        double m = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t d = 0; d < 4; ++d) {
          const double v = x[(c * h + 2 * r + d / 2) * w + 2 * q + d % 2];
          if (v > m) {
            m = v;
            arg = d;
          }
        }
        if (pattern().recording) pattern().marks.push_back(arg);
        y[(c * oh + r) * ow + q] = m;
      }
    }
  }
  return y;
}

/// Logits of one sample.
inline Vec forward(const ciard::ModelSpec& spec, const Params& p, const Vec& x) {
  Vec cur = x;
  std::size_t t = 0;
  if (spec.arch == ciard::Arch::SmallCnn) {
    std::size_t ch = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
    for (std::size_t cout : spec.conv_channels) {
      cur = conv3(cur, ch, h, w, p.tensors[t], p.tensors[t + 1]);
      t += 2;
      relu(cur);
      cur = maxpool2(cur, cout, h, w);
      ch = cout;
      h /= 2;
      w /= 2;
    }
  }
  const std::size_t n_fc = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < n_fc; ++l) {
    cur = linear(cur, p.tensors[t], p.tensors[t + 1]);
    t += 2;
    if (l + 1 < n_fc) relu(cur);
  }
  return cur;
}

inline std::vector<Vec> forward_batch(const ciard::ModelSpec& spec, const Params& p, const ciard::Tensor& x) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < x.dim(0); ++i) out.push_back(forward(spec, p, sample_of(x, i)));
  return out;
}

inline std::vector<Vec> rows_of(const ciard::Tensor& t) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < t.dim(0); ++i) out.push_back(sample_of(t, i));
  return out;
}

// --- scalar losses ---------------------------------------------------------

inline Vec log_softmax(const Vec& z, double tau) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v / tau);
  double s = 0.0;
  for (double v : z) s += std::exp(v / tau - m);
  const double lse = m + std::log(s);
  Vec out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] / tau - lse;
  return out;
}

inline double ce(const Vec& z, int y) { return -log_softmax(z, 1.0)[static_cast<std::size_t>(y)]; }

/// KL(softmax(s/tau) || softmax(t/tau)) for one sample.
inline double kl(const Vec& s, const Vec& t, double tau) {
  const Vec lp = log_softmax(s, tau), lq = log_softmax(t, tau);
  double v = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) v += std::exp(lp[k]) * (lp[k] - lq[k]);
  return v;
}

inline int argmax(const Vec& z) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < z.size(); ++k) {
    if (z[k] > z[best]) best = k;
  }
  return static_cast<int>(best);
}

inline double mean_ce(const std::vector<Vec>& z, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += ce(z[i], y[i]);
  return s / static_cast<double>(z.size());
}

inline double mean_kl(const std::vector<Vec>& s, const std::vector<Vec>& t, double tau, bool tau2) {
  double v = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) v += kl(s[i], t[i], tau);
  v /= static_cast<double>(s.size());
  return tau2 ? v * tau * tau : v;
}

/// Per-sample loop over teacher mistakes.
inline double push(const std::vector<Vec>& teacher, const std::vector<Vec>& student, const std::vector<int>& y,
                   double tau) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (argmax(teacher[i]) == y[i]) continue;
    s += kl(student[i], teacher[i], tau);
    ++n;
  }
  return n == 0 ? 0.0 : s / n;
}

struct StudentTerms {
  double w_nat = 0.5, lambda = 1.0, tau_distill = 1.0, tau_push = 4.0;
  bool tau2 = true;
};

inline double student_loss(const std::vector<Vec>& s_clean, const std::vector<Vec>& t_nat_clean,
                           const std::vector<Vec>& s_adv, const std::vector<Vec>& t_adv_adv,
                           const std::vector<Vec>& t_nat_adv, const std::vector<int>& y, const StudentTerms& w) {
  const double nat = mean_kl(s_clean, t_nat_clean, w.tau_distill, w.tau2);
  const double adv = mean_kl(s_adv, t_adv_adv, w.tau_distill, w.tau2);
  return (1.0 - w.w_nat) * adv + w.w_nat * nat - w.lambda * push(t_nat_adv, s_adv, y, w.tau_push);
}

// --- finite differences ----------------------------------------------------

/// Central difference of f around v[i]. When `smooth` is given it is set to
/// whether both evaluations share one activation pattern.
inline double central(Vec& v, std::size_t i, double h, const std::function<double()>& f, bool* smooth = nullptr) {
  Pattern& pt = pattern();
  const double keep = v[i];
  pt.recording = smooth != nullptr;
  pt.marks.clear();
  v[i] = keep + h;
  const double up = f();
  const std::vector<std::size_t> up_marks = pt.marks;
  pt.marks.clear();
  v[i] = keep - h;
  const double down = f();
  v[i] = keep;
  if (smooth) *smooth = up_marks == pt.marks;
  pt.recording = false;
  pt.marks.clear();
  return (up - down) / (2.0 * h);
}

/// |a - n| / max(|a|, |n|, floor).
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

}  // namespace ref
