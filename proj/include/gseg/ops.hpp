#pragma once

// Differentiable operators. Feature maps are channels-last
// [batch, spatial..., channels] with 2 or 3 spatial axes.

#include <span>
#include <vector>

#include "gseg/autodiff.hpp"

namespace gseg::ops {

// Cross-correlation with "same" zero padding: output extent ceil(n / stride),
// total padding max((out - 1) * stride + k - n, 0), the odd unit on the high side.
// kernel: [k..., c_in, c_out]; bias: [c_out].
template <typename T>
Var conv(Tape<T>& tape, Var x, Var kernel, Var bias, int stride = 1);

// Exact adjoint of a stride-2 "same" convolution from 2n to n, plus bias.
// kernel: [k..., c_in, c_out] where c_in is the channel count of x.
// Output spatial extents are exactly twice the input's.
template <typename T>
Var conv_transpose(Tape<T>& tape, Var x, Var kernel, Var bias);

enum class PoolMode { max, avg };

// Non-overlapping window; every spatial extent must be divisible by window.
// Max-pool routes the gradient to the first maximum in row-major order.
template <typename T>
Var pool(Tape<T>& tape, Var x, PoolMode mode, int window = 2);

// Stride-1 average over a window x window (x window) neighbourhood with
// "same" padding; padded positions are excluded from the mean.
template <typename T>
Var avg_pool_same(Tape<T>& tape, Var x, int window = 3);

// concat(max_pool(x, 2), avg_pool(x, 2)) along channels.
template <typename T>
Var hybrid_pool(Tape<T>& tape, Var x);

template <typename T>
Var relu(Tape<T>& tape, Var x);

// Softmax over the last (channel) axis, max-subtracted.
template <typename T>
Var softmax(Tape<T>& tape, Var x);

// Inverted dropout: survivors are scaled by 1 / (1 - rate); identity when
// not training.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, bool training, Rng& rng);

// Concatenate along the last (channel) axis in argument order.
template <typename T>
Var concat(Tape<T>& tape, std::span<const Var> xs);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var sum(Tape<T>& tape, Var x);

// Spatial geometry of a convolution, shared by the forward and adjoint kernels.
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in[3] = {1, 1, 1};
  std::int64_t out[3] = {1, 1, 1};
  std::int64_t kernel[3] = {1, 1, 1};
  std::int64_t pad_lo[3] = {0, 0, 0};
  std::int64_t stride = 1;
};

ConvGeometry same_conv_geometry(const Shape& x_shape, const Shape& kernel_shape, int stride);

// Output shapes (symbolic shape inference without running the operator).
Shape conv_output_shape(const Shape& x, const Shape& kernel, int stride = 1);
Shape conv_transpose_output_shape(const Shape& x, const Shape& kernel);
Shape pool_output_shape(const Shape& x, int window = 2);

}  // namespace gseg::ops
