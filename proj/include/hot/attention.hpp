#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hot/autodiff.hpp"
#include "hot/tensor.hpp"

namespace hot {

enum class Variant { exact, factored, kernelized };

/// Which attention dimensions are active. `stock` keeps the variable-wise
/// factor and replaces the time-wise one by the identity; `time` does the
/// converse; `none` bypasses attention entirely.
enum class AttentionDims { none, stock, time, both };

enum class ScoreScale { model_dim, head_dim };

Variant parse_variant(const std::string& s);
AttentionDims parse_dims(const std::string& s);
std::string to_string(Variant v);
std::string to_string(AttentionDims a);

/// Projections of one head. Row-vector convention: Q = X · wq with
/// wq, wk, wv of shape (d, d_h) and wo of shape (d_h, d).
struct HeadParams {
  Tensor wq, wk, wv, wo;
};
using AttentionParams = std::vector<HeadParams>;

AttentionParams init_attention_params(std::size_t d, std::size_t heads, std::size_t head_size, std::mt19937_64& rng);

struct AttentionConfig {
  Variant variant = Variant::factored;
  std::size_t heads = 1;
  std::size_t head_size = 8;
  Pooling pooling = Pooling::mean;  // unused by the exact variant
  std::size_t features = 64;        // random-feature count, kernelized only
  std::uint64_t seed = 0;           // feature sampling
  ScoreScale scale = ScoreScale::model_dim;
  bool orthogonal_features = false;

  void validate() const;
  /// 1/sqrt(d) or 1/sqrt(d_h) depending on `scale`.
  double score_scale(std::size_t model_dim) const;
};

struct FactoredAttentionMatrices {
  Tensor s1;  // (N, N), row-stochastic
  Tensor s2;  // (T, T), row-stochastic
};

struct KernelFeatureMap {
  enum class Kind { positive_random, elu_shift };

  Tensor directions;  // (m, d_h); empty for elu_shift
  Kind kind = Kind::positive_random;
  std::uint64_t seed = 0;

  /// I.i.d. standard-normal directions, optionally orthogonalized in blocks.
  static KernelFeatureMap sample(std::size_t features, std::size_t head_size, std::uint64_t seed,
                                 bool orthogonal = false);
  static KernelFeatureMap elu(std::size_t head_size);

  std::size_t feature_count() const;
};

/// One map per head, derived deterministically from cfg.seed.
std::vector<KernelFeatureMap> make_feature_maps(const AttentionConfig& cfg);

// ---------------------------------------------------------------------------
// Tensor-level operations. Outputs include the residual X.

/// X (n, d) + sum_h softmax(X wq (X wk)^T / sqrt(d)) X wv wo.
Tensor standard_attention(const Tensor& x, const AttentionParams& params,
                          ScoreScale scale = ScoreScale::model_dim);

/// Fourth-order attention over every (variable, time) pair: the score tensor
/// has shape (N, N, T, T) and the softmax runs jointly over (j, tau). Costs
/// O(N^2 T^2 d); parallel over query positions.
Tensor exact_ho_attention(const Tensor& x, const AttentionParams& params,
                          ScoreScale scale = ScoreScale::model_dim);

/// Per-head score tensor S[i, j, t, tau] of the exact path.
Tensor exact_attention_scores(const Tensor& x, const HeadParams& head, ScoreScale scale = ScoreScale::model_dim);

/// (N, T, c) -> (T, c), pooling over variables.
Tensor pool_vars(const Tensor& q, Pooling kind);
/// (N, T, c) -> (N, c), pooling over time.
Tensor pool_time(const Tensor& q, Pooling kind);

std::vector<FactoredAttentionMatrices> factored_attention_matrices(const Tensor& x, const AttentionParams& params,
                                                                   const AttentionConfig& cfg);

/// Per head: V ×1 S1 ×2 S2, projected back by wo, summed over heads, plus X.
Tensor factored_attention(const Tensor& x, const AttentionParams& params, const AttentionConfig& cfg);

/// x (n, d_h) -> (n, m)
Tensor kernel_features(const Tensor& x, const KernelFeatureMap& map);

/// Factored attention with both factors replaced by normalized kernel
/// products; neither S1 nor S2 is materialized.
Tensor kernelized_factored_attention(const Tensor& x, const AttentionParams& params, const AttentionConfig& cfg,
                                     std::span<const KernelFeatureMap> maps);

/// Leading-term operation counts, with unit constants:
///   exact       H * (N T)^2 * d
///   factored    H * d * (N^2 T + T^2 N)
///   kernelized  H * m * d * N * T   (m random features stand in for one d)
double flops_estimate(Variant v, std::size_t n, std::size_t t, std::size_t d, std::size_t heads, std::size_t features);

namespace reference {
/// Serial version of exact_ho_attention, same loop order.
Tensor exact_ho_attention(const Tensor& x, const AttentionParams& params, ScoreScale scale = ScoreScale::model_dim);
}  // namespace reference

// ---------------------------------------------------------------------------
// Differentiable attention used by the model.

struct HeadVars {
  ad::Var wq, wk, wv, wo;
};

HeadVars head_vars(ad::Tape& tape, const HeadParams& p, bool requires_grad);

struct AttentionInputs {
  ad::Var queries;  // (N, Tq, d)
  ad::Var keys;     // (N, Tk, d), also the value source
  double query_first_position = 0.0;
  double key_first_position = 0.0;
  const ad::Mask* key_keep = nullptr;  // (N * Tk), optional
  bool rotary = false;                 // rotate time-wise queries/keys
  const ad::Mask* query_keep = nullptr;  // (N * Tq), optional; pooled queries skip masked rows
};

/// Sum over heads of the attended values projected by wo, shape (N, Tq, d).
/// The residual is not included. For self-attention pass the same Var as
/// queries and keys.
ad::Var attend(const AttentionInputs& in, std::span<const HeadVars> heads, const AttentionConfig& cfg,
               AttentionDims dims, std::span<const KernelFeatureMap> maps);

}  // namespace hot
