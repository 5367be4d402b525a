#include "hot/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

namespace hot {

BenchRow bench_case(const BenchCase& c, std::size_t reps, std::uint64_t seed) {
  if (reps == 0) throw std::invalid_argument("bench: reps must be positive");
  if (c.n == 0 || c.t == 0 || c.d == 0 || c.heads == 0) throw std::invalid_argument("bench: sizes must be positive");
  if (c.variant == Variant::exact && c.n * c.t > kExactBenchMaxTokens)
    throw std::invalid_argument("bench: exact variant limited to N*T <= " + std::to_string(kExactBenchMaxTokens));

  std::mt19937_64 rng(seed);
  const std::size_t dh = std::max<std::size_t>(1, c.d / c.heads);
  const Tensor x = random_normal({c.n, c.t, c.d}, rng);
  const auto params = init_attention_params(c.d, c.heads, dh, rng);
  AttentionConfig cfg;
  cfg.variant = c.variant;
  cfg.heads = c.heads;
  cfg.head_size = dh;
  cfg.features = c.features;
  cfg.seed = seed;
  const auto maps = c.variant == Variant::kernelized ? make_feature_maps(cfg) : std::vector<KernelFeatureMap>{};

  auto run = [&] {
    switch (c.variant) {
      case Variant::exact: return exact_ho_attention(x, params);
      case Variant::factored: return factored_attention(x, params, cfg);
      case Variant::kernelized: return kernelized_factored_attention(x, params, cfg, maps);
    }
    throw std::logic_error("bench: unhandled variant");
  };
  double sink = run()[0];  // warm-up, untimed
  std::vector<double> ms;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = run();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    sink += y[0];
  }
  if (!std::isfinite(sink)) throw std::runtime_error("bench: non-finite output");
  std::sort(ms.begin(), ms.end());
  const std::size_t mid = ms.size() / 2;
  const double median = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  return {c, median, flops_estimate(c.variant, c.n, c.t, c.d, c.heads, c.features)};
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows, bool header) {
  if (header) os << "variant,N,T,d,H,m,median_ms,flops_est\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6g", r.median_ms, r.flops);
    os << to_string(r.c.variant) << ',' << r.c.n << ',' << r.c.t << ',' << r.c.d << ',' << r.c.heads << ','
       << r.c.features << ',' << buf << '\n';
  }
}

}  // namespace hot
