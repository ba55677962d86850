#pragma once

// Dense row-major N-d arrays. Feature maps use the channels-last layout
// [batch, spatial..., channels]; kernels use [spatial..., c_in, c_out].

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gseg/error.hpp"

namespace gseg {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);
void validate_shape(const Shape& shape);

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::int64_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t channels() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major offset of a full multi-index.
  std::size_t offset(std::span<const std::int64_t> index) const;
  T& at(std::initializer_list<std::int64_t> index) { return data_[offset(std::span(index.begin(), index.size()))]; }
  const T& at(std::initializer_list<std::int64_t> index) const {
    return data_[offset(std::span(index.begin(), index.size()))];
  }

  T item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// out[i_0, ..., i_{r-1}] = in[i_{perm^-1}...]: axis a of the result is axis perm[a] of the input.
template <typename T>
Tensor<T> permute_axes(const Tensor<T>& in, std::span<const std::size_t> perm);

// Stack along a new leading axis. All inputs must share one shape.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items);

// Element i of the first axis.
template <typename T>
Tensor<T> take(const Tensor<T>& in, std::int64_t index);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace gseg
