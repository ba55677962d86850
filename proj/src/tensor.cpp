#include "gseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gseg {

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    require(e >= 1, ErrorCode::shape, "tensor extents must be >= 1, got " + to_string(shape));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(static_cast<std::size_t>(element_count(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  require(static_cast<std::int64_t>(data_.size()) == element_count(shape_), ErrorCode::shape,
          "data length " + std::to_string(data_.size()) + " does not match shape " + to_string(shape_));
}

template <typename T>
std::size_t Tensor<T>::offset(std::span<const std::int64_t> index) const {
  require(index.size() == shape_.size(), ErrorCode::shape, "index rank mismatch");
  std::size_t off = 0;
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    require(index[a] >= 0 && index[a] < shape_[a], ErrorCode::shape, "index out of range");
    off = off * static_cast<std::size_t>(shape_[a]) + static_cast<std::size_t>(index[a]);
  }
  return off;
}

template <typename T>
T Tensor<T>::item() const {
  require(data_.size() == 1, ErrorCode::shape, "item() on non-scalar tensor " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> permute_axes(const Tensor<T>& in, std::span<const std::size_t> perm) {
  const std::size_t rank = in.rank();
  require(perm.size() == rank, ErrorCode::shape, "permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    require(p < rank && !seen[p], ErrorCode::invalid_argument, "not a permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t a = 0; a < rank; ++a) out_shape[a] = in.shape()[perm[a]];

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t a = rank; a-- > 1;) in_strides[a - 1] = in_strides[a] * static_cast<std::size_t>(in.shape()[a]);
  std::vector<std::size_t> step(rank);
  for (std::size_t a = 0; a < rank; ++a) step[a] = in_strides[perm[a]];

  Tensor<T> out(out_shape);
  std::vector<std::int64_t> idx(rank, 0);
  std::size_t src = 0;
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = in[src];
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      src += step[a];
      if (idx[a] < out_shape[a]) break;
      src -= step[a] * static_cast<std::size_t>(out_shape[a]);
      idx[a] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  require(!items.empty(), ErrorCode::invalid_argument, "stack of zero tensors");
  const Shape& inner = items.front().shape();
  Shape shape{static_cast<std::int64_t>(items.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(element_count(shape)));
  for (const auto& t : items) {
    require(t.shape() == inner, ErrorCode::shape,
            "stack shape mismatch: " + to_string(t.shape()) + " vs " + to_string(inner));
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> take(const Tensor<T>& in, std::int64_t index) {
  require(in.rank() >= 1 && index >= 0 && index < in.extent(0), ErrorCode::shape, "take index out of range");
  Shape inner(in.shape().begin() + 1, in.shape().end());
  const auto n = static_cast<std::size_t>(element_count(inner));
  auto first = in.data().begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(index));
  return Tensor<T>(std::move(inner), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n)));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> permute_axes(const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> permute_axes(const Tensor<double>&, std::span<const std::size_t>);
template Tensor<float> stack(std::span<const Tensor<float>>);
template Tensor<double> stack(std::span<const Tensor<double>>);
template Tensor<float> take(const Tensor<float>&, std::int64_t);
template Tensor<double> take(const Tensor<double>&, std::int64_t);

}  // namespace gseg
