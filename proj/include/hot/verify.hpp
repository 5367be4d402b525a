#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hot/attention.hpp"

namespace hot {

struct CheckResult {
  std::string suite;
  std::string id;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool gated = true;  // false: reported only
};

/// Implementations under test. Defaults are the library functions; tests
/// swap in perturbed versions to confirm the suites notice.
struct VerifyHooks {
  std::function<Tensor(const Tensor&, const AttentionParams&, ScoreScale)> exact = exact_ho_attention;
  std::function<Tensor(const Tensor&, const AttentionParams&, const AttentionConfig&)> factored = factored_attention;
  std::function<Tensor(const Tensor&, const AttentionParams&, const AttentionConfig&, std::span<const KernelFeatureMap>)>
      kernelized = kernelized_factored_attention;
  std::function<Tensor(const Tensor&, const Tensor&, std::size_t)> mode_product = hot::mode_product;
};

/// Suites: tensors, attention, kron, gradients, all. Fixed seeds throughout.
/// Throws std::invalid_argument for an unknown suite name.
std::vector<CheckResult> run_verify(const std::string& suite, const VerifyHooks& hooks = {});

bool all_passed(const std::vector<CheckResult>& results);

/// CSV: suite,id,measured,tolerance,result
void write_verify_report(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace hot
