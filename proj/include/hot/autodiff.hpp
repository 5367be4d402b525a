#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hot/tensor.hpp"

namespace hot {

enum class Pooling { sum, mean, product };

Pooling parse_pooling(const std::string& s);
std::string to_string(Pooling p);

}  // namespace hot

namespace hot::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

using Mask = std::vector<unsigned char>;
using GradientMap = std::unordered_map<std::size_t, Tensor>;

/// Append-only record of tensor-level primitive applications.
///
/// Nodes are stored in creation order, so every node's inputs precede it.
/// Recording and backward are single-threaded; separate tapes are independent.
class Tape {
 public:
  using Inputs = std::span<const Tensor* const>;
  using ForwardFn = std::function<Tensor(Inputs)>;

  struct BackwardArgs {
    Inputs inputs;
    const Tensor& output;
    const Tensor& grad;
    std::span<Tensor> input_grads;  // assign into the slots that are needed
    std::span<const char> needed;
  };
  using BackwardFn = std::function<void(const BackwardArgs&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Gradients of a scalar root for every requires-grad leaf. Leaves that do
  /// not contribute to the root get zero tensors.
  GradientMap backward(Var root) const;

  /// Recomputes every recorded node from the stored leaf values and reports
  /// whether all outputs are reproduced bit-exactly.
  bool replay_matches() const;

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = true;
    ForwardFn forward;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var silu(Var a);
/// elu(a) + 1, a strictly positive feature map.
Var elu_plus_one(Var a);
/// a (..., c) + bias (c) broadcast over leading axes.
Var add_bias(Var a, Var bias);

// Linear algebra.
Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// x (..., din) · w (din, dout) -> (..., dout)
Var linear(Var x, Var w);
Var mode_product(Var t, Var m, std::size_t mode);
Var reshape(Var a, Shape shape);

// Structural.
Var concat(Var a, Var b, std::size_t axis);
/// Removes `axis` by selecting `index` along it.
Var select(Var a, std::size_t axis, std::size_t index);
/// table (S, d) -> (ids.size(), d)
Var gather_rows(Var table, std::vector<std::size_t> ids);

// Reductions.
Var sum(Var a);
Var mean(Var a);
/// Pools (N, T, c) over axis 0 or 1. `keep` (N*T, optional) excludes entries;
/// a fiber with nothing kept pools to zero. Product pooling runs in
/// log-magnitude/sign space.
Var pool(Var x, std::size_t axis, Pooling kind, const Mask& keep = {});

// Attention pieces.
/// Row-wise softmax of a matrix; `keep` (rows*cols, optional) masks entries.
Var softmax_rows(Var a, const Mask& keep = {});
/// x (..., d) normalized by its root-mean-square over the last axis, times gain.
Var rmsnorm(Var x, Var gain, double eps = 1e-6);
/// Rotary rotation of x (..., T, d_h) with positions first_position + t along
/// the second-to-last axis. Pairs (2j, 2j+1) rotate by pos * 10000^(-2j/d_h).
Var rotary(Var x, double first_position = 0.0);
/// Positive random features: phi_j(x) = m^{-1/2} exp(w_j·x - |x|^2/2) for
/// x (n, d_h) and constant directions w (m, d_h).
Var kernel_features(Var x, const Tensor& directions);
/// Divides every mode-`mode` slice i of a by z[i]. z must be strictly positive.
Var div_mode(Var a, Var z, std::size_t mode);

// Losses.
/// Weighted mean of binary cross-entropy with logits; zero when all weights are 0.
Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights);

}  // namespace hot::ad
