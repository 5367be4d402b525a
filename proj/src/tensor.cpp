#include "hot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hot/kernels.hpp"

namespace hot {

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxOrder)
    throw std::invalid_argument("tensor order must be in [1,4], got " +
                                std::to_string(shape.size()));
  for (auto e : shape)
    if (e == 0) throw std::invalid_argument("tensor extents must be >= 1: " + shape_string(shape));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.order() != 2) throw std::invalid_argument(std::string(what) + ": expected an order-2 tensor");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_string(shape_));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size())
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size())
    throw std::out_of_range("index arity " + std::to_string(index.size()) + " does not match order " +
                            std::to_string(shape_.size()));
  std::size_t flat = 0;
  for (std::size_t a = 0; a < index.size(); ++a) {
    if (index[a] >= shape_[a])
      throw std::out_of_range("index " + std::to_string(index[a]) + " out of range on axis " + std::to_string(a) +
                              " of shape " + shape_string(shape_));
    flat = flat * shape_[a] + index[a];
  }
  return flat;
}

double& Tensor::at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

Shape3 Shape3::of(const Tensor& t) {
  if (t.order() != 3) throw std::invalid_argument("expected (N,T,d) tensor, got " + shape_string(t.shape()));
  return {t.extent(0), t.extent(1), t.extent(2)};
}

Tensor matricize(const Tensor& t, std::size_t mode) {
  if (mode >= t.order())
    throw std::out_of_range("matricize: mode " + std::to_string(mode) + " out of range for order " +
                            std::to_string(t.order()));
  const auto& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < mode; ++a) outer *= s[a];
  for (std::size_t a = mode + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t ext = s[mode];
  Tensor out({ext, outer * inner});
  // Column index over the remaining axes is o * inner + i.
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < ext; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[k * outer * inner + o * inner + i] = t[(o * ext + k) * inner + i];
  return out;
}

Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape) {
  require_matrix(m, "fold");
  if (mode >= shape.size()) throw std::out_of_range("fold: mode out of range");
  Tensor out(shape);
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < mode; ++a) outer *= shape[a];
  for (std::size_t a = mode + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t ext = shape[mode];
  if (m.rows() != ext || m.cols() != outer * inner)
    throw std::invalid_argument("fold: matrix " + shape_string(m.shape()) + " incompatible with " +
                                shape_string(shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < ext; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * ext + k) * inner + i] = m[k * outer * inner + o * inner + i];
  return out;
}

Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode) { return kernels::mode_product(t, m, mode); }

Tensor kronecker(const Tensor& a, const Tensor& b) {
  require_matrix(a, "kronecker");
  require_matrix(b, "kronecker");
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  Tensor out({ar * br, ac * bc});
  const std::size_t oc = ac * bc;
  for (std::size_t i = 0; i < ar; ++i)
    for (std::size_t j = 0; j < ac; ++j) {
      const double s = a[i * ac + j];
      for (std::size_t p = 0; p < br; ++p)
        for (std::size_t q = 0; q < bc; ++q) out[(i * br + p) * oc + j * bc + q] = s * b[p * bc + q];
    }
  return out;
}

Tensor slice_time(const Tensor& t, std::size_t step) {
  const auto s = Shape3::of(t);
  if (step >= s.n_steps)
    throw std::out_of_range("slice_time: step " + std::to_string(step) + " >= T=" + std::to_string(s.n_steps));
  Tensor out({s.n_vars, s.n_feat});
  for (std::size_t i = 0; i < s.n_vars; ++i)
    std::copy_n(t.raw() + (i * s.n_steps + step) * s.n_feat, s.n_feat, out.raw() + i * s.n_feat);
  return out;
}

Tensor stack_time(std::span<const Tensor> slices) {
  if (slices.empty()) throw std::invalid_argument("stack_time: no slices");
  const std::size_t n = slices[0].rows(), d = slices[0].cols(), steps = slices.size();
  Tensor out({n, steps, d});
  for (std::size_t t = 0; t < steps; ++t) {
    if (slices[t].shape() != slices[0].shape()) throw std::invalid_argument("stack_time: slice shapes differ");
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(slices[t].raw() + i * d, d, out.raw() + (i * steps + t) * d);
  }
  return out;
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_size(new_shape) != t.size())
    throw std::invalid_argument("reshape: " + shape_string(t.shape()) + " -> " + shape_string(new_shape) +
                                " changes element count");
  return Tensor(std::move(new_shape), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor matmul(const Tensor& a, const Tensor& b) { return kernels::matmul(a, b); }

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace hot
