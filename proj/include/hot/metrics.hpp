#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace hot {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  void add(int predicted, int actual);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts over paired 0/1 predictions and labels; entries with valid == 0 are
/// skipped when `valid` is non-empty.
ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> actual,
                          std::span<const int> valid = {});

/// Matthews correlation; 0 whenever a factor of the denominator is 0.
double mcc(const ConfusionCounts& c);

struct AccuracyF1 {
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// Accuracy and positive-class F1 (0 when 2TP+FP+FN is 0). Throws
/// std::invalid_argument on empty counts.
AccuracyF1 accuracy_f1(const ConfusionCounts& c);

}  // namespace hot
