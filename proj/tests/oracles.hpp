#pragma once

// Plain-loop reference computations used as test oracles. They share nothing
// with the library beyond the Tensor container.

#include <cmath>
#include <cstddef>
#include <vector>

#include "hot/attention.hpp"
#include "hot/tensor.hpp"

namespace oracle {

using hot::Tensor;

// x (rows, d) · w (d, c)
inline Tensor project(const Tensor& x, const Tensor& w) {
  const std::size_t rows = x.size() / w.rows(), d = w.rows(), c = w.cols();
  Tensor out({rows, c});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * w[j * c + k];
      out[r * c + k] = s;
    }
  return out;
}

inline void softmax_in_place(std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0;
  for (double& v : row) z += (v = std::exp(v - mx));
  for (double& v : row) v /= z;
}

// Row-stochastic softmax(q kᵀ · scale) for q (n, c), k (m, c).
inline Tensor attention_matrix(const Tensor& q, const Tensor& k, double scale) {
  const std::size_t n = q.rows(), m = k.rows(), c = q.cols();
  Tensor a({n, m});
  std::vector<double> row(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t e = 0; e < c; ++e) s += q[i * c + e] * k[j * c + e];
      row[j] = s * scale;
    }
    softmax_in_place(row);
    for (std::size_t j = 0; j < m; ++j) a[i * m + j] = row[j];
  }
  return a;
}

// X + Σ_h A_h V_h W_O for a matrix of tokens x (n, d).
inline Tensor standard_attention(const Tensor& x, const hot::AttentionParams& params, double scale) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = x;
  for (const auto& h : params) {
    const Tensor a = attention_matrix(project(x, h.wq), project(x, h.wk), scale);
    const Tensor v = project(x, h.wv);
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> mixed(c, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t e = 0; e < c; ++e) mixed[e] += a[i * n + j] * v[j * c + e];
      for (std::size_t k = 0; k < d; ++k) {
        double s = 0;
        for (std::size_t e = 0; e < c; ++e) s += mixed[e] * h.wo[e * d + k];
        out[i * d + k] += s;
      }
    }
  }
  return out;
}

// Mean over time of p (N*T, c) -> (N, c), or over variables -> (T, c).
inline Tensor mean_over(const Tensor& p, std::size_t n, std::size_t t, bool over_time) {
  const std::size_t c = p.cols();
  Tensor out({over_time ? n : t, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t e = 0; e < c; ++e)
        out[(over_time ? i : s) * c + e] += p[(i * t + s) * c + e] / double(over_time ? t : n);
  return out;
}

// The factored map materialized: A = S1 ⊗ S2 applied to the flattened values,
// with mean pooling. Returns the (N, T, d) output including the residual.
inline Tensor factored_attention(const Tensor& x, const hot::AttentionParams& params, double scale) {
  const std::size_t n = x.extent(0), t = x.extent(1), d = x.extent(2), nt = n * t;
  const Tensor flat = hot::reshape(x, {nt, d});
  Tensor out = x;
  for (const auto& h : params) {
    const Tensor q = project(flat, h.wq), k = project(flat, h.wk), v = project(flat, h.wv);
    const Tensor s1 = attention_matrix(mean_over(q, n, t, true), mean_over(k, n, t, true), scale);
    const Tensor s2 = attention_matrix(mean_over(q, n, t, false), mean_over(k, n, t, false), scale);
    const std::size_t c = v.cols();
    for (std::size_t row = 0; row < nt; ++row) {
      const std::size_t i = row / t, s = row % t;
      std::vector<double> mixed(c, 0.0);
      for (std::size_t col = 0; col < nt; ++col) {
        const double a = s1[i * n + col / t] * s2[s * t + col % t];
        for (std::size_t e = 0; e < c; ++e) mixed[e] += a * v[col * c + e];
      }
      for (std::size_t kk = 0; kk < d; ++kk) {
        double acc = 0;
        for (std::size_t e = 0; e < c; ++e) acc += mixed[e] * h.wo[e * d + kk];
        out[row * d + kk] += acc;
      }
    }
  }
  return out;
}

inline double rel_frobenius(const Tensor& a, const Tensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

inline double mcc(double tp, double tn, double fp, double fn) {
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  return den == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
}

}  // namespace oracle
