#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "hot/attention.hpp"
#include "hot/tensor.hpp"

namespace hot {

/// Thin SVD M = U diag(s) V^T with k = min(p, q): U is (p, k), V is (q, k),
/// s descending and non-negative. The first entry of each u_i whose magnitude
/// is non-negligible is positive; v_i carries the matching sign.
struct Svd {
  Tensor u;
  std::vector<double> s;
  Tensor v;
  int sweeps = 0;
};

/// One-sided Jacobi SVD. Throws std::runtime_error if the sweeps do not
/// converge, and std::invalid_argument on non-finite input.
Svd svd(const Tensor& m, int max_sweeps = 80);

/// NT×NT matrix rearranged to N²×T² so that a Kronecker product B⊗C becomes
/// the outer product vec(B) vec(C)^T (row-major vec):
///   data[i*N + j, t*T + tau] = A[i*T + t, j*T + tau].
struct RearrangedMatrix {
  Tensor data;
  std::size_t n_vars = 0;
  std::size_t n_steps = 0;
};

RearrangedMatrix rearrange(const Tensor& a, std::size_t n_vars, std::size_t n_steps);
Tensor unrearrange(const RearrangedMatrix& r);

struct KroneckerFactors {
  std::size_t n_vars = 0;
  std::size_t n_steps = 0;
  std::vector<Tensor> b;                // (N, N) each
  std::vector<Tensor> c;                // (T, T) each
  std::vector<double> singular_values;  // retained, descending
  std::vector<double> spectrum;         // every singular value of the rearranged matrix

  std::size_t rank() const noexcept { return b.size(); }
  /// sqrt of the discarded spectral energy; the optimal Frobenius error.
  double tail_error() const;
};

/// Best rank-R sum of Kronecker products B_i ⊗ C_i in Frobenius norm, with
/// B_i = sqrt(s_i) mat(u_i) and C_i = sqrt(s_i) mat(v_i). R in [1, min(N², T²)].
KroneckerFactors nearest_kronecker(const Tensor& a, std::size_t n_vars, std::size_t n_steps, std::size_t rank);

/// Σ_i B_i ⊗ C_i; an empty factor list gives the zero matrix.
Tensor reconstruct(const KroneckerFactors& f);

struct RankProfileRow {
  std::size_t head = 0;
  std::size_t rank = 0;
  double rel_error = 0.0;
};

inline constexpr std::size_t kRankProfileMaxTokens = 4096;

/// Relative Frobenius error of the rank-R Kronecker approximation of each
/// head's exact NT×NT attention matrix, for R = 1 .. min(N², T²).
std::vector<RankProfileRow> attention_rank_profile(const Tensor& x, const AttentionParams& params,
                                                   ScoreScale scale = ScoreScale::model_dim);

/// Flattens S[i, j, t, tau] to the NT×NT matrix A[i*T + t, j*T + tau].
Tensor flatten_attention(const Tensor& scores);

void write_rank_profile_csv(std::ostream& os, const std::vector<RankProfileRow>& rows);

}  // namespace hot
