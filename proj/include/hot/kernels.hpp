#pragma once

#include <cstddef>
#include <span>

#include "hot/tensor.hpp"

// Dense kernels behind the tensor and autodiff layers.
//
// hot::kernels holds the OpenMP versions used by the library. Each output
// element is owned by exactly one thread and accumulated in a fixed order, so
// results are bit-identical to the serial hot::reference versions regardless
// of thread count. The reference versions are kept for tests and benchmarks.

namespace hot::kernels {

// Regions below this many multiply-adds stay serial.
inline constexpr std::size_t kParallelWork = std::size_t{1} << 16;

int max_threads();
void set_threads(int n);

/// c = a · b for row-major a (n×k), b (k×m).
Tensor matmul(const Tensor& a, const Tensor& b);
/// c = aᵀ · b for a (k×n), b (k×m).
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// c = a · bᵀ for a (n×k), b (m×k).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// t ×_mode m, viewing t as (outer, extent(mode), inner).
Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode);

/// Row-wise softmax over the last axis of a matrix. A zero in `keep` removes
/// the entry from the normalization; rows with nothing kept become zero.
Tensor softmax_rows(const Tensor& logits, std::span<const unsigned char> keep = {});

}  // namespace hot::kernels

namespace hot::reference {

Tensor matmul(const Tensor& a, const Tensor& b);
/// Definitional route: fold(m · matricize(t, mode)).
Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode);
Tensor softmax_rows(const Tensor& logits, std::span<const unsigned char> keep = {});

}  // namespace hot::reference
