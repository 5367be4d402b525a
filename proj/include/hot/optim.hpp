#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "hot/tensor.hpp"

namespace hot {

/// Named parameter tensors. Ordered so that iteration (and therefore any
/// derived random stream or file layout) is deterministic.
using Params = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double clip_norm = 0.0;     // global-norm clipping; 0 disables
};

struct AdamState {
  std::uint64_t step = 0;
  Params m;
  Params v;
};

/// One bias-corrected Adam update. Throws std::invalid_argument on a missing
/// or mis-shaped gradient and std::domain_error on a non-finite one.
void adam_step(Params& params, const Params& grads, AdamState& state, const AdamConfig& cfg);

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;
  std::string worst_param;
  double worst = 0.0;
  std::size_t checked = 0;

  bool passed(double tol) const { return worst < tol; }
};

/// Compares an analytic gradient with central differences
/// (f(p+eps e) - f(p-eps e)) / 2 eps, elementwise, using the relative error
/// |a-b| / max(|a|, |b|, 1e-8). With `max_entries` > 0 only that many
/// entries per tensor are probed, chosen by `seed`.
GradCheckReport grad_check(const std::function<double(const Params&)>& f,
                           const std::function<Params(const Params&)>& gradient, const Params& params,
                           double eps = 1e-5, std::size_t max_entries = 0, std::uint64_t seed = 0);

double relative_error(double a, double b);

}  // namespace hot
