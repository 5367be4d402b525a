#include "hot/kron.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace hot {

namespace {

using Column = std::vector<double>;

double dot(const Column& a, const Column& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Extends `cols` (orthonormal or zero) so every zero column becomes a unit
// vector orthogonal to the rest, drawing candidates from the standard basis.
void complete_basis(std::vector<Column>& cols, const std::vector<bool>& valid) {
  const std::size_t dim = cols.empty() ? 0 : cols[0].size();
  std::size_t next = 0;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (valid[k]) continue;
    for (; next < dim; ++next) {
      Column e(dim, 0.0);
      e[next] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t q = 0; q < cols.size(); ++q) {
          if (q == k || (!valid[q] && q > k)) continue;
          const double p = dot(e, cols[q]);
          for (std::size_t i = 0; i < dim; ++i) e[i] -= p * cols[q][i];
        }
      const double nrm = std::sqrt(dot(e, e));
      if (nrm > 1e-8) {
        for (auto& x : e) x /= nrm;
        cols[k] = std::move(e);
        ++next;
        break;
      }
    }
  }
}

}  // namespace

Svd svd(const Tensor& m, int max_sweeps) {
  if (m.order() != 2) throw std::invalid_argument("svd: expected a matrix");
  for (double x : m.data())
    if (!std::isfinite(x)) throw std::invalid_argument("svd: non-finite entry");

  const bool flipped = m.rows() < m.cols();
  const Tensor a = flipped ? transpose(m) : m;
  const std::size_t p = a.rows(), q = a.cols();

  // Columns of the working matrix and of the accumulated right rotations.
  std::vector<Column> w(q, Column(p)), v(q, Column(q, 0.0));
  for (std::size_t j = 0; j < q; ++j) {
    for (std::size_t i = 0; i < p; ++i) w[j][i] = a[i * q + j];
    v[j][j] = 1.0;
  }

  constexpr double tol = 1e-15;
  int sweep = 0;
  for (;; ++sweep) {
    if (sweep >= max_sweeps)
      throw std::runtime_error("svd: no convergence after " + std::to_string(max_sweeps) + " sweeps");
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < q; ++i)
      for (std::size_t j = i + 1; j < q; ++j) {
        const double alpha = dot(w[i], w[i]);
        const double beta = dot(w[j], w[j]);
        const double gamma = dot(w[i], w[j]);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double wi = w[i][r], wj = w[j][r];
          w[i][r] = c * wi - s * wj;
          w[j][r] = s * wi + c * wj;
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double vi = v[i][r], vj = v[j][r];
          v[i][r] = c * vi - s * vj;
          v[j][r] = s * vi + c * vj;
        }
      }
    if (!rotated) break;
  }

  std::vector<double> sigma(q);
  for (std::size_t j = 0; j < q; ++j) sigma[j] = std::sqrt(dot(w[j], w[j]));
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return sigma[x] > sigma[y]; });

  const double smax = q ? sigma[order[0]] : 0.0;
  std::vector<Column> ucols(q), vcols(q);
  std::vector<bool> valid(q);
  std::vector<double> s(q);
  for (std::size_t k = 0; k < q; ++k) {
    const std::size_t j = order[k];
    s[k] = sigma[j];
    vcols[k] = v[j];
    valid[k] = sigma[j] > 0.0 && sigma[j] > 1e-300 && (smax == 0.0 || sigma[j] > smax * 1e-14);
    ucols[k] = Column(p, 0.0);
    if (valid[k])
      for (std::size_t r = 0; r < p; ++r) ucols[k][r] = w[j][r] / sigma[j];
  }
  complete_basis(ucols, valid);

  // Sign convention on the left vectors of the original matrix, which are
  // the right ones of the working matrix when it was transposed.
  for (std::size_t k = 0; k < q; ++k) {
    auto& lead = flipped ? vcols[k] : ucols[k];
    double mx = 0.0;
    for (double x : lead) mx = std::max(mx, std::abs(x));
    for (double x : lead) {
      if (std::abs(x) > 1e-12 * mx) {
        if (x < 0) {
          for (auto& y : ucols[k]) y = -y;
          for (auto& y : vcols[k]) y = -y;
        }
        break;
      }
    }
  }

  Svd out;
  out.sweeps = sweep;
  out.s = s;
  Tensor uu({p, q}), vv({q, q});
  for (std::size_t k = 0; k < q; ++k) {
    for (std::size_t r = 0; r < p; ++r) uu[r * q + k] = ucols[k][r];
    for (std::size_t r = 0; r < q; ++r) vv[r * q + k] = vcols[k][r];
  }
  if (flipped) {
    out.u = std::move(vv);
    out.v = std::move(uu);
  } else {
    out.u = std::move(uu);
    out.v = std::move(vv);
  }
  return out;
}

RearrangedMatrix rearrange(const Tensor& a, std::size_t n_vars, std::size_t n_steps) {
  if (a.order() != 2 || a.rows() != a.cols())
    throw std::invalid_argument("rearrange: expected a square matrix, got " + shape_string(a.shape()));
  if (n_vars == 0 || n_steps == 0 || a.rows() != n_vars * n_steps)
    throw std::invalid_argument("rearrange: side " + std::to_string(a.rows()) + " is not N*T = " +
                                std::to_string(n_vars) + "*" + std::to_string(n_steps));
  const std::size_t n = n_vars, t = n_steps, side = n * t;
  RearrangedMatrix r{Tensor({n * n, t * t}), n, t};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t tau = 0; tau < t; ++tau)
          r.data[(i * n + j) * (t * t) + s * t + tau] = a[(i * t + s) * side + j * t + tau];
  return r;
}

Tensor unrearrange(const RearrangedMatrix& r) {
  const std::size_t n = r.n_vars, t = r.n_steps, side = n * t;
  if (r.data.order() != 2 || r.data.rows() != n * n || r.data.cols() != t * t)
    throw std::invalid_argument("unrearrange: data does not match (N, T)");
  Tensor a({side, side});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t tau = 0; tau < t; ++tau)
          a[(i * t + s) * side + j * t + tau] = r.data[(i * n + j) * (t * t) + s * t + tau];
  return a;
}

double KroneckerFactors::tail_error() const {
  double e = 0.0;
  for (std::size_t k = rank(); k < spectrum.size(); ++k) e += spectrum[k] * spectrum[k];
  return std::sqrt(e);
}

KroneckerFactors nearest_kronecker(const Tensor& a, std::size_t n_vars, std::size_t n_steps, std::size_t rank) {
  const std::size_t max_rank = std::min(n_vars * n_vars, n_steps * n_steps);
  if (rank == 0 || rank > max_rank)
    throw std::invalid_argument("nearest_kronecker: rank " + std::to_string(rank) + " outside [1, " +
                                std::to_string(max_rank) + "]");
  const RearrangedMatrix r = rearrange(a, n_vars, n_steps);
  const Svd d = svd(r.data);
  const std::size_t k = d.s.size();

  KroneckerFactors f;
  f.n_vars = n_vars;
  f.n_steps = n_steps;
  f.spectrum = d.s;
  for (std::size_t i = 0; i < rank; ++i) {
    const double root = std::sqrt(d.s[i]);
    Tensor b({n_vars, n_vars}), c({n_steps, n_steps});
    for (std::size_t e = 0; e < b.size(); ++e) b[e] = root * d.u[e * k + i];
    for (std::size_t e = 0; e < c.size(); ++e) c[e] = root * d.v[e * k + i];
    f.b.push_back(std::move(b));
    f.c.push_back(std::move(c));
    f.singular_values.push_back(d.s[i]);
  }
  return f;
}

Tensor reconstruct(const KroneckerFactors& f) {
  const std::size_t side = f.n_vars * f.n_steps;
  if (side == 0) throw std::invalid_argument("reconstruct: empty dimensions");
  Tensor out({side, side});
  for (std::size_t i = 0; i < f.rank(); ++i) out = out + kronecker(f.b[i], f.c[i]);
  return out;
}

Tensor flatten_attention(const Tensor& scores) {
  if (scores.order() != 4 || scores.extent(0) != scores.extent(1) || scores.extent(2) != scores.extent(3))
    throw std::invalid_argument("flatten_attention: expected (N, N, T, T)");
  const std::size_t n = scores.extent(0), t = scores.extent(2), side = n * t;
  Tensor a({side, side});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t tau = 0; tau < t; ++tau) a[(i * t + s) * side + j * t + tau] = scores.at(i, j, s, tau);
  return a;
}

std::vector<RankProfileRow> attention_rank_profile(const Tensor& x, const AttentionParams& params,
                                                   ScoreScale scale) {
  const auto s3 = Shape3::of(x);
  const std::size_t n = s3.n_vars, t = s3.n_steps;
  if (n * t > kRankProfileMaxTokens)
    throw std::invalid_argument("attention_rank_profile: N*T = " + std::to_string(n * t) + " exceeds " +
                                std::to_string(kRankProfileMaxTokens));
  std::vector<RankProfileRow> rows;
  const std::size_t max_rank = std::min(n * n, t * t);
  for (std::size_t h = 0; h < params.size(); ++h) {
    const Tensor a = flatten_attention(exact_attention_scores(x, params[h], scale));
    const double norm = frobenius_norm(a);
    const KroneckerFactors full = nearest_kronecker(a, n, t, max_rank);
    Tensor approx({n * t, n * t});
    for (std::size_t r = 0; r < max_rank; ++r) {
      approx = approx + kronecker(full.b[r], full.c[r]);
      rows.push_back({h, r + 1, frobenius_norm(a - approx) / norm});
    }
  }
  return rows;
}

void write_rank_profile_csv(std::ostream& os, const std::vector<RankProfileRow>& rows) {
  os << "head,R,rel_error\n";
  const auto old = os.precision(17);
  for (const auto& r : rows) os << r.head << ',' << r.rank << ',' << r.rel_error << '\n';
  os.precision(old);
}

}  // namespace hot
