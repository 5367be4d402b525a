#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hot {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxOrder = 4;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles with order 1..4.
///
/// A default-constructed Tensor is an empty placeholder (order 0, no data);
/// every other constructor validates the shape. Element access through at()
/// is bounds-checked and throws std::out_of_range.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor identity(std::size_t n);
  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  bool empty() const noexcept { return shape_.empty(); }
  std::size_t order() const noexcept { return shape_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return extent(0); }
  std::size_t cols() const { return extent(1); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t flat) noexcept { return data_[flat]; }
  double operator[](std::size_t flat) const noexcept { return data_[flat]; }

  double& at(std::span<const std::size_t> index);
  double at(std::span<const std::size_t> index) const;

  template <typename... I>
  double& at(I... i) {
    const std::size_t idx[] = {static_cast<std::size_t>(i)...};
    return at(std::span<const std::size_t>(idx));
  }
  template <typename... I>
  double at(I... i) const {
    const std::size_t idx[] = {static_cast<std::size_t>(i)...};
    return at(std::span<const std::size_t>(idx));
  }

  double item() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t flat_index(std::span<const std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// Shape (N, T, d) of a multivariate series; all extents positive.
struct Shape3 {
  std::size_t n_vars = 1;
  std::size_t n_steps = 1;
  std::size_t n_feat = 1;

  static Shape3 of(const Tensor& t);
};

/// Mode-`mode` unfolding: result is (extent(mode), prod of other extents).
/// Column ordering: the remaining axes in ascending order, row-major, so the
/// last remaining axis varies fastest.
Tensor matricize(const Tensor& t, std::size_t mode);

/// Inverse of matricize for a tensor of the given shape.
Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape);

/// t ×_mode m: contracts axis `mode` of t with the columns of m.
Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode);

Tensor kronecker(const Tensor& a, const Tensor& b);

/// (N, T, d) -> (N, d) at the given time step.
Tensor slice_time(const Tensor& t, std::size_t step);

/// Inverse of slicing every step: stacks T slices of shape (N, d) into (N, T, d).
Tensor stack_time(std::span<const Tensor> slices);

Tensor reshape(const Tensor& t, Shape new_shape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

double frobenius_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
Tensor random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

}  // namespace hot
