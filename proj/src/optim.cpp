#include "hot/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace hot {

void adam_step(Params& params, const Params& grads, AdamState& state, const AdamConfig& cfg) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
    for (double g : it->second.data())
      if (!std::isfinite(g)) throw std::domain_error("adam_step: non-finite gradient in '" + name + "'");
  }

  double clip = 1.0;
  if (cfg.clip_norm > 0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      if (params.count(name))
        for (double v : g.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) clip = cfg.clip_norm / norm;
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto [mi, fresh_m] = state.m.try_emplace(name, p.shape(), 0.0);
    auto [vi, fresh_v] = state.v.try_emplace(name, p.shape(), 0.0);
    (void)fresh_m;
    (void)fresh_v;
    if (mi->second.shape() != p.shape() || vi->second.shape() != p.shape())
      throw std::invalid_argument("adam_step: optimizer state shape mismatch for '" + name + "'");
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = clip * g[i] + cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const std::function<double(const Params&)>& f,
                           const std::function<Params(const Params&)>& gradient, const Params& params, double eps,
                           std::size_t max_entries, std::uint64_t seed) {
  GradCheckReport report;
  const Params analytic = gradient(params);
  Params probe = params;
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : probe) {
    const Tensor& g = analytic.at(name);
    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (max_entries > 0 && entries.size() > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
      std::sort(entries.begin(), entries.end());
    }
    double worst = 0.0;
    for (auto i : entries) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = f(probe);
      p[i] = saved - eps;
      const double down = f(probe);
      p[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(g[i]))
        throw std::domain_error("grad_check: non-finite value while probing '" + name + "'");
      const double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, relative_error(g[i], fd));
      ++report.checked;
    }
    report.max_rel_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  return report;
}

}  // namespace hot
