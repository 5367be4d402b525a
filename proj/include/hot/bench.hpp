#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hot/attention.hpp"

namespace hot {

struct BenchCase {
  Variant variant = Variant::kernelized;
  std::size_t n = 4, t = 64, d = 32, heads = 4, features = 64;
};

struct BenchRow {
  BenchCase c;
  double median_ms = 0.0;
  double flops = 0.0;
};

/// Largest N*T accepted for the exact variant.
inline constexpr std::size_t kExactBenchMaxTokens = 4096;

/// Median wall time of `reps` forward passes, after one untimed pass, on random inputs (head size
/// d / heads). Throws std::invalid_argument past the exact-variant guard.
BenchRow bench_case(const BenchCase& c, std::size_t reps, std::uint64_t seed = 0);

/// CSV columns: variant,N,T,d,H,m,median_ms,flops_est
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows, bool header = true);

}  // namespace hot
