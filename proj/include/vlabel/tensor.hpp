#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vlabel {

using Shape = std::vector<std::size_t>;

/// Raised when tensor shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor. Dimensions are all positive; a scalar has shape {1}.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  void fill(T v);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

/// Pairs (axis of a, axis of b) summed over by `contract`.
using AxisPairs = std::vector<std::pair<std::size_t, std::size_t>>;

/// Tensor contraction. Output axes are a's free axes followed by b's free axes.
/// When every axis is contracted the result is a scalar of shape {1}.
template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, const AxisPairs& axes);

/// Axis permutation: out.shape[i] == in.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& in, const std::vector<std::size_t>& perm);

/// C = alpha * op(A) * op(B) + beta * C on row-major buffers.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

/// Pins the BLAS backend to one thread so reductions are reproducible.
void set_single_threaded_blas();

}  // namespace vlabel
