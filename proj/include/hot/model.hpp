#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hot/attention.hpp"
#include "hot/autodiff.hpp"
#include "hot/data.hpp"
#include "hot/optim.hpp"

namespace hot {

enum class Modality { multimodal, price, text };

Modality parse_modality(const std::string& s);
std::string to_string(Modality m);

struct ModelConfig {
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t head_size = 0;  // 0: hidden / heads rounded down to even, at least 2
  std::size_t blocks = 2;     // applied to both encoder and decoder
  double dropout = 0.0;
  Variant variant = Variant::factored;
  Pooling pooling = Pooling::mean;
  std::size_t features = 64;
  bool orthogonal_features = false;
  ScoreScale scale = ScoreScale::model_dim;
  std::size_t text_dim = kTextDim;
  std::size_t mlp_ratio = 2;
  AttentionDims dims = AttentionDims::both;
  Modality modality = Modality::multimodal;
  bool rotary = true;
  std::uint64_t seed = 0;

  std::size_t resolved_head_size() const;
  void validate() const;
  /// Attention settings for the attention module with the given index.
  AttentionConfig attention(std::size_t module) const;
};

/// Sets one field from its textual form. Returns false for an unknown key;
/// throws std::invalid_argument for a bad value.
bool set_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);
/// key=value lines for every field, in a fixed order.
std::string to_text(const ModelConfig& cfg);

struct Model {
  ModelConfig cfg;
  std::vector<std::string> vocabulary;  // stock ids, row order of the CLS table
  Params params;
  std::map<std::string, std::vector<KernelFeatureMap>> feature_maps;  // kernelized only

  std::size_t stock_index(const std::string& id) const;
};

/// Deterministic initialization from cfg.seed. Only the parameters used by
/// cfg.modality are created.
Model init_model(const ModelConfig& cfg, std::vector<std::string> vocabulary);

/// Rebuilds the derived feature maps after cfg or params were replaced.
void refresh_feature_maps(Model& m);

/// Inputs of one forward pass. `text_mask` may be null (everything present);
/// an all-zero mask is treated the same way.
struct ModelInput {
  const Tensor* prices = nullptr;  // (N, T, 6)
  const Tensor* text = nullptr;    // (N, T, text_dim)
  const ad::Mask* text_mask = nullptr;
  std::vector<std::size_t> stock_ids;  // rows of the CLS table, N
};

ModelInput model_input(const Model& m, const WindowSample& s);

using ParamVars = std::map<std::string, ad::Var>;

ParamVars bind_params(ad::Tape& tape, const Params& params, bool requires_grad);

/// (N, T+1, d): the CLS row of each stock at time 0, projected price tokens after it.
ad::Var tokenize(const Model& m, const ParamVars& p, const Tensor& prices, const std::vector<std::size_t>& ids);

/// Encoder over a token stream (N, T', d) whose first time position is `first_position`.
ad::Var encode_tokens(const Model& m, const ParamVars& p, ad::Var x, const ad::Mask* keep, double first_position,
                      std::mt19937_64* dropout_rng);

/// Projected text through the encoder, (N, T, d).
ad::Var encode(const Model& m, const ParamVars& p, const Tensor& text, const ad::Mask* keep,
               std::mt19937_64* dropout_rng = nullptr);

/// Decoder over price tokens (N, T+1, d); `memory` may be null for the
/// price-only modality. Returns the final hidden states (N, T+1, d).
ad::Var decode_tokens(const Model& m, const ParamVars& p, ad::Var tokens, const ad::Var* memory,
                      const ad::Mask* memory_keep, std::mt19937_64* dropout_rng = nullptr);

/// Classifier on the CLS position of hidden states (N, T', d) -> logits (N).
ad::Var classify(const Model& m, const ParamVars& p, ad::Var hidden);

/// Full forward pass for the configured modality, logits (N).
ad::Var forward(const Model& m, const ParamVars& p, const ModelInput& in, std::mt19937_64* dropout_rng = nullptr);

/// Logits without recording gradients.
Tensor logits(const Model& m, const ModelInput& in);
Tensor logits(const Model& m, const Params& params, const ModelInput& in);

/// 1 iff sigmoid(logit) >= 0.5, i.e. logit >= 0.
std::vector<int> predict(const Tensor& logits);

struct LossGrad {
  double loss = 0.0;
  std::size_t count = 0;  // labels that contributed
  Tensor logits;
  Params grads;
};

/// Mean BCE over the valid labels of one sample and its gradient.
LossGrad loss_and_grad(const Model& m, const Params& params, const ModelInput& in, const Tensor& labels,
                       const Tensor& valid, std::mt19937_64* dropout_rng = nullptr);
double loss_value(const Model& m, const Params& params, const ModelInput& in, const Tensor& labels,
                  const Tensor& valid);

/// Binary checkpoint: "HOTC", u32 version, u64 config length + config text,
/// u64 vocabulary size + (u32 length, bytes) ids, u64 tensor count, then per
/// tensor u32 name length, name, u32 rank, u64 extents, f64 values.
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace hot
