#include "hot/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <omp.h>

namespace hot::kernels {

namespace {

void check_matmul(const Tensor& a, const Tensor& b, std::size_t ka, std::size_t kb) {
  if (a.order() != 2 || b.order() != 2) throw std::invalid_argument("matmul: operands must be matrices");
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
}

struct ModeView {
  std::size_t outer = 1, ext = 1, inner = 1;
};

ModeView mode_view(const Shape& s, std::size_t mode) {
  ModeView v;
  for (std::size_t a = 0; a < mode; ++a) v.outer *= s[a];
  v.ext = s[mode];
  for (std::size_t a = mode + 1; a < s.size(); ++a) v.inner *= s[a];
  return v;
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b, a.order() == 2 ? a.cols() : 0, b.order() == 2 ? b.rows() : 1);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* pc = c.raw();
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += s * brow[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_matmul(a, b, a.order() == 2 ? a.rows() : 0, b.order() == 2 ? b.rows() : 1);
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Tensor c({n, m});
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* pc = c.raw();
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[p * n + i];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += s * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matmul(a, b, a.order() == 2 ? a.cols() : 0, b.order() == 2 ? b.cols() : 1);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c({n, m});
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* pc = c.raw();
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * m + j] = s;
    }
  }
  return c;
}

Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode) {
  if (m.order() != 2) throw std::invalid_argument("mode_product: factor must be a matrix");
  if (mode >= t.order())
    throw std::out_of_range("mode_product: mode " + std::to_string(mode) + " out of range for order " +
                            std::to_string(t.order()));
  const auto v = mode_view(t.shape(), mode);
  if (m.cols() != v.ext)
    throw std::invalid_argument("mode_product: factor " + shape_string(m.shape()) + " does not match extent " +
                                std::to_string(v.ext) + " of mode " + std::to_string(mode));
  const std::size_t rows = m.rows();
  Shape out_shape = t.shape();
  out_shape[mode] = rows;
  Tensor out(out_shape);
  const double* pt = t.raw();
  const double* pm = m.raw();
  double* po = out.raw();
  const auto blocks = static_cast<std::ptrdiff_t>(v.outer * rows);
#pragma omp parallel for schedule(static) if (v.outer * rows * v.ext * v.inner > kParallelWork)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t o = static_cast<std::size_t>(b) / rows;
    const std::size_t r = static_cast<std::size_t>(b) % rows;
    double* dst = po + (o * rows + r) * v.inner;
    if (v.inner == 1) {
      const double* src = pt + o * v.ext;
      const double* mrow = pm + r * v.ext;
      double acc = 0.0;
      for (std::size_t c = 0; c < v.ext; ++c) acc += mrow[c] * src[c];
      *dst = acc;
      continue;
    }
    for (std::size_t c = 0; c < v.ext; ++c) {
      const double s = pm[r * v.ext + c];
      const double* src = pt + (o * v.ext + c) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += s * src[i];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits, std::span<const unsigned char> keep) {
  if (logits.order() != 2) throw std::invalid_argument("softmax_rows: expected a matrix");
  const std::size_t n = logits.rows(), m = logits.cols();
  if (!keep.empty() && keep.size() != n * m) throw std::invalid_argument("softmax_rows: mask size mismatch");
  Tensor out({n, m});
  const double* pl = logits.raw();
  double* po = out.raw();
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * m * 8 > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* row = pl + i * m;
    double* dst = po + i * m;
    const unsigned char* k = keep.empty() ? nullptr : keep.data() + i * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (!k || k[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = (!k || k[j]) ? std::exp(row[j] - mx) : 0.0;
      dst[j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) dst[j] /= z;
  }
  return out;
}

}  // namespace hot::kernels

namespace hot::reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.order() != 2 || b.order() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("reference::matmul: shape mismatch");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode) {
  if (m.order() != 2 || mode >= t.order() || m.cols() != t.extent(mode))
    throw std::invalid_argument("reference::mode_product: shape mismatch");
  Shape out_shape = t.shape();
  out_shape[mode] = m.rows();
  return fold(reference::matmul(m, matricize(t, mode)), mode, out_shape);
}

Tensor softmax_rows(const Tensor& logits, std::span<const unsigned char> keep) {
  const std::size_t n = logits.rows(), m = logits.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (keep.empty() || keep[i * m + j]) mx = std::max(mx, logits[i * m + j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = (keep.empty() || keep[i * m + j]) ? std::exp(logits[i * m + j] - mx) : 0.0;
      out[i * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return out;
}

}  // namespace hot::reference
