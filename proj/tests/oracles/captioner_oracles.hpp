#pragma once

// Direct loop evaluations of the captioner building blocks, independent of
// the autodiff graph.

#include <cmath>
#include <vector>

#include "updown/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec matvec(const updown::Tensor& w, const Vec& x) {
  Vec y(w.num_rows(), 0.0);
  for (std::size_t i = 0; i < w.num_rows(); ++i)
    for (std::size_t j = 0; j < w.num_cols(); ++j) y[i] += w.at(i, j) * x[j];
  return y;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmOut {
  Vec h, c;
};

inline LstmOut lstm(const Vec& x, const Vec& h, const Vec& c, const updown::Tensor& w_ih, const updown::Tensor& w_hh,
                    const updown::Tensor& b) {
  const std::size_t m = h.size();
  const Vec a = matvec(w_ih, x), r = matvec(w_hh, h);
  LstmOut out{Vec(m), Vec(m)};
  for (std::size_t j = 0; j < m; ++j) {
    const double gi = sigmoid(a[j] + r[j] + b[j]);
    const double gf = sigmoid(a[m + j] + r[m + j] + b[m + j]);
    const double go = sigmoid(a[2 * m + j] + r[2 * m + j] + b[2 * m + j]);
    const double gg = std::tanh(a[3 * m + j] + r[3 * m + j] + b[3 * m + j]);
    out.c[j] = gf * c[j] + gi * gg;
    out.h[j] = go * std::tanh(out.c[j]);
  }
  return out;
}

struct AttendOut {
  Vec alpha, v_hat;
};

/// a_i = w_aᵀ tanh(W_va v_i + W_ha h), alpha = softmax(a), v̂ = Σ alpha_i v_i.
inline AttendOut attend(const updown::Tensor& V, const Vec& h, const updown::Tensor& w_va, const updown::Tensor& w_ha,
                        const updown::Tensor& w_a) {
  const std::size_t k = V.num_rows(), d = V.num_cols();
  const Vec q = matvec(w_ha, h);
  Vec a(k);
  for (std::size_t i = 0; i < k; ++i) {
    Vec v(V.row_span(i).begin(), V.row_span(i).end());
    const Vec p = matvec(w_va, v);
    double s = 0;
    for (std::size_t j = 0; j < p.size(); ++j) s += w_a[j] * std::tanh(p[j] + q[j]);
    a[i] = s;
  }
  double mx = a[0];
  for (double x : a) mx = std::max(mx, x);
  double z = 0;
  AttendOut out{Vec(k), Vec(d, 0.0)};
  for (std::size_t i = 0; i < k; ++i) z += std::exp(a[i] - mx);
  for (std::size_t i = 0; i < k; ++i) out.alpha[i] = std::exp(a[i] - mx) / z;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) out.v_hat[j] += out.alpha[i] * V.at(i, j);
  return out;
}

}  // namespace oracle
