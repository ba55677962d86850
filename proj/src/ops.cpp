#include "gseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace gseg::ops {

namespace {

std::size_t spatial_rank(const Shape& x) {
  require(x.size() == 4 || x.size() == 5, ErrorCode::shape,
          "expected [batch, spatial..., channels] with 2 or 3 spatial axes, got " + to_string(x));
  return x.size() - 2;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Floor division that is correct for negative numerators.
std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Weight accessor W(tap, cx, cy) = w[tap * tap_stride + cx * x_stride + cy * y_stride].
template <typename T>
struct WeightView {
  const T* w;
  std::int64_t tap_stride;
  std::int64_t x_stride;
  std::int64_t y_stride;
};

enum class ConvPass { forward, adjoint, weight_grad };

// Walks every (input, output) position pair coupled by each kernel tap, with
// the valid output range per tap computed up front so the inner loops carry
// no bounds checks. Accumulation order is fixed: batch, tap, then position.
//   forward:     y[o, cy] += sum_cx x[i, cx] W(t, cx, cy)
//   adjoint:     x[i, cx] += sum_cy y[o, cy] W(t, cx, cy)
//   weight_grad: dW(t, cx, cy) += x[i, cx] y[o, cy]
template <typename T, ConvPass Pass>
void correlate(const ConvGeometry& g, std::int64_t cx, std::int64_t cy, T* x, T* y, WeightView<T> wv, T* dw) {
  const std::int64_t taps = g.kernel[0] * g.kernel[1] * g.kernel[2];
  std::vector<T> wt(static_cast<std::size_t>(cx * cy));
  std::vector<T> acc(static_cast<std::size_t>(cx * cy));

  // Output positions o with input i = o * stride - pad + t inside [0, n).
  auto range = [&](int axis, std::int64_t t, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t off = g.pad_lo[axis] - t;
    lo = off > 0 ? ceil_div(off, g.stride) : 0;
    hi = std::min<std::int64_t>(g.out[axis], floor_div(g.in[axis] - 1 + off, g.stride) + 1);
  };

  for (std::int64_t tap = 0; tap < taps; ++tap) {
    const std::int64_t t0 = tap / (g.kernel[1] * g.kernel[2]);
    const std::int64_t t1 = (tap / g.kernel[2]) % g.kernel[1];
    const std::int64_t t2 = tap % g.kernel[2];
    std::int64_t lo0, hi0, lo1, hi1, lo2, hi2;
    range(0, t0, lo0, hi0);
    range(1, t1, lo1, hi1);
    range(2, t2, lo2, hi2);
    if (lo0 >= hi0 || lo1 >= hi1 || lo2 >= hi2) continue;

    if constexpr (Pass != ConvPass::weight_grad) {
      for (std::int64_t a = 0; a < cx; ++a)
        for (std::int64_t b = 0; b < cy; ++b)
          wt[static_cast<std::size_t>(a * cy + b)] = wv.w[tap * wv.tap_stride + a * wv.x_stride + b * wv.y_stride];
    } else {
      std::fill(acc.begin(), acc.end(), T{0});
    }

    const std::int64_t x_step = g.stride * cx;
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (std::int64_t o0 = lo0; o0 < hi0; ++o0) {
        const std::int64_t i0 = o0 * g.stride - g.pad_lo[0] + t0;
        for (std::int64_t o1 = lo1; o1 < hi1; ++o1) {
          const std::int64_t i1 = o1 * g.stride - g.pad_lo[1] + t1;
          const std::int64_t i2 = lo2 * g.stride - g.pad_lo[2] + t2;
          T* xp = x + (((b * g.in[0] + i0) * g.in[1] + i1) * g.in[2] + i2) * cx;
          T* yp = y + (((b * g.out[0] + o0) * g.out[1] + o1) * g.out[2] + lo2) * cy;
          for (std::int64_t o2 = lo2; o2 < hi2; ++o2, xp += x_step, yp += cy) {
            if constexpr (Pass == ConvPass::forward) {
              for (std::int64_t a = 0; a < cx; ++a) {
                const T xv = xp[a];
                const T* wr = wt.data() + a * cy;
                for (std::int64_t c = 0; c < cy; ++c) yp[c] += xv * wr[c];
              }
            } else if constexpr (Pass == ConvPass::adjoint) {
              for (std::int64_t a = 0; a < cx; ++a) {
                const T* wr = wt.data() + a * cy;
                T s{0};
                for (std::int64_t c = 0; c < cy; ++c) s += yp[c] * wr[c];
                xp[a] += s;
              }
            } else {
              for (std::int64_t a = 0; a < cx; ++a) {
                const T xv = xp[a];
                T* ar = acc.data() + a * cy;
                for (std::int64_t c = 0; c < cy; ++c) ar[c] += xv * yp[c];
              }
            }
          }
        }
      }
    }

    if constexpr (Pass == ConvPass::weight_grad) {
      for (std::int64_t a = 0; a < cx; ++a)
        for (std::int64_t c = 0; c < cy; ++c)
          dw[tap * wv.tap_stride + a * wv.x_stride + c * wv.y_stride] += acc[static_cast<std::size_t>(a * cy + c)];
    }
  }
}

void check_kernel(const Shape& x, const Shape& kernel) {
  const auto r = spatial_rank(x);
  require(kernel.size() == r + 2, ErrorCode::shape,
          "kernel spatial rank does not match input: kernel " + to_string(kernel) + ", input " + to_string(x));
  require(kernel[r] == x.back(), ErrorCode::shape,
          "channel mismatch: kernel c_in " + std::to_string(kernel[r]) + " vs input channels " + std::to_string(x.back()));
}

template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const auto c = y.channels();
  require(bias.size() == static_cast<std::size_t>(c), ErrorCode::shape, "bias length must equal output channels");
  auto d = y.data();
  for (std::size_t i = 0; i < d.size(); i += static_cast<std::size_t>(c))
    for (std::int64_t k = 0; k < c; ++k) d[i + static_cast<std::size_t>(k)] = bias[static_cast<std::size_t>(k)];
}

template <typename T>
void accumulate_bias_grad(Tensor<T>& db, const Tensor<T>& dy) {
  const auto c = dy.channels();
  auto d = dy.data();
  for (std::size_t i = 0; i < d.size(); i += static_cast<std::size_t>(c))
    for (std::int64_t k = 0; k < c; ++k) db[static_cast<std::size_t>(k)] += d[i + static_cast<std::size_t>(k)];
}

// Geometry for spatial window ops (pooling) mapped onto three axes.
struct Grid3 {
  std::int64_t batch, n[3], channels;
};

Grid3 grid_of(const Shape& x) {
  const auto r = spatial_rank(x);
  Grid3 g{x[0], {x[1], x[2], r == 3 ? x[3] : 1}, x.back()};
  return g;
}

}  // namespace

ConvGeometry same_conv_geometry(const Shape& x, const Shape& kernel, int stride) {
  check_kernel(x, kernel);
  require(stride >= 1, ErrorCode::invalid_argument, "stride must be positive");
  const auto r = spatial_rank(x);
  ConvGeometry g;
  g.batch = x[0];
  g.stride = stride;
  for (std::size_t a = 0; a < r; ++a) {
    g.in[a] = x[a + 1];
    g.kernel[a] = kernel[a];
    g.out[a] = ceil_div(g.in[a], stride);
    const std::int64_t total = std::max<std::int64_t>((g.out[a] - 1) * stride + g.kernel[a] - g.in[a], 0);
    g.pad_lo[a] = total / 2;
  }
  return g;
}

Shape conv_output_shape(const Shape& x, const Shape& kernel, int stride) {
  const auto g = same_conv_geometry(x, kernel, stride);
  Shape out = x;
  for (std::size_t a = 0; a + 2 < x.size(); ++a) out[a + 1] = g.out[a];
  out.back() = kernel.back();
  return out;
}

Shape conv_transpose_output_shape(const Shape& x, const Shape& kernel) {
  check_kernel(x, kernel);
  Shape out = x;
  for (std::size_t a = 1; a + 1 < x.size(); ++a) out[a] = 2 * x[a];
  out.back() = kernel.back();
  return out;
}

Shape pool_output_shape(const Shape& x, int window) {
  spatial_rank(x);
  require(window >= 1, ErrorCode::invalid_argument, "pool window must be positive");
  Shape out = x;
  for (std::size_t a = 1; a + 1 < x.size(); ++a) {
    require(x[a] % window == 0, ErrorCode::shape,
            "spatial extent " + std::to_string(x[a]) + " not divisible by pool window " + std::to_string(window));
    out[a] = x[a] / window;
  }
  return out;
}

template <typename T>
Var conv(Tape<T>& tape, Var x, Var kernel, Var bias, int stride) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(kernel);
  const auto g = same_conv_geometry(xv.shape(), kv.shape(), stride);
  const auto cx = xv.channels();
  const auto cy = kv.channels();
  const WeightView<T> wv{kv.raw(), cx * cy, cy, 1};

  Tensor<T> y(conv_output_shape(xv.shape(), kv.shape(), stride));
  add_bias(y, tape.value(bias));
  correlate<T, ConvPass::forward>(g, cx, cy, const_cast<T*>(xv.raw()), y.raw(), wv, nullptr);

  return tape.record("conv", std::move(y), {x, kernel, bias}, [x, kernel, bias, g, cx, cy](Tape<T>& t, const Tensor<T>& dy) {
    T* dyp = const_cast<T*>(dy.raw());
    const auto& kv = t.value(kernel);
    const WeightView<T> wv{kv.raw(), cx * cy, cy, 1};
    if (auto* dx = t.grad_slot(x)) correlate<T, ConvPass::adjoint>(g, cx, cy, dx->raw(), dyp, wv, nullptr);
    if (auto* dk = t.grad_slot(kernel))
      correlate<T, ConvPass::weight_grad>(g, cx, cy, const_cast<T*>(t.value(x).raw()), dyp, wv, dk->raw());
    if (auto* db = t.grad_slot(bias)) accumulate_bias_grad(*db, dy);
  });
}

template <typename T>
Var conv_transpose(Tape<T>& tape, Var x, Var kernel, Var bias) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(kernel);
  const Shape out_shape = conv_transpose_output_shape(xv.shape(), kv.shape());
  // The strided convolution this operator is the adjoint of: big -> small.
  Shape big_kernel = kv.shape();
  std::swap(big_kernel[big_kernel.size() - 2], big_kernel[big_kernel.size() - 1]);
  const auto g = same_conv_geometry(out_shape, big_kernel, 2);
  const auto c_small = xv.channels();
  const auto c_big = kv.channels();
  // W(t, big, small) = kernel[t, small, big]
  const WeightView<T> wv{kv.raw(), c_small * c_big, 1, c_big};

  Tensor<T> y(out_shape);
  add_bias(y, tape.value(bias));
  correlate<T, ConvPass::adjoint>(g, c_big, c_small, y.raw(), const_cast<T*>(xv.raw()), wv, nullptr);

  return tape.record("conv_transpose", std::move(y), {x, kernel, bias},
                     [x, kernel, bias, g, c_small, c_big](Tape<T>& t, const Tensor<T>& dy) {
                       T* dyp = const_cast<T*>(dy.raw());
                       const auto& kv = t.value(kernel);
                       const WeightView<T> wv{kv.raw(), c_small * c_big, 1, c_big};
                       if (auto* dx = t.grad_slot(x))
                         correlate<T, ConvPass::forward>(g, c_big, c_small, dyp, dx->raw(), wv, nullptr);
                       if (auto* dk = t.grad_slot(kernel))
                         correlate<T, ConvPass::weight_grad>(g, c_big, c_small, dyp, const_cast<T*>(t.value(x).raw()), wv,
                                                             dk->raw());
                       if (auto* db = t.grad_slot(bias)) accumulate_bias_grad(*db, dy);
                     });
}

template <typename T>
Var pool(Tape<T>& tape, Var x, PoolMode mode, int window) {
  const auto& xv = tape.value(x);
  const Shape out_shape = pool_output_shape(xv.shape(), window);
  const Grid3 gi = grid_of(xv.shape());
  const Grid3 go = grid_of(out_shape);
  const std::int64_t w2 = xv.rank() == 5 ? window : 1;
  const std::int64_t c = gi.channels;

  Tensor<T> y(out_shape);
  const bool is_max = mode == PoolMode::max;
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (is_max) argmax->resize(y.size());
  const T inv = T{1} / static_cast<T>(window * window * w2);

  std::size_t oi = 0;
  for (std::int64_t b = 0; b < go.batch; ++b)
    for (std::int64_t o0 = 0; o0 < go.n[0]; ++o0)
      for (std::int64_t o1 = 0; o1 < go.n[1]; ++o1)
        for (std::int64_t o2 = 0; o2 < go.n[2]; ++o2)
          for (std::int64_t k = 0; k < c; ++k, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_i = 0;
            T s{0};
            for (std::int64_t a = 0; a < window; ++a)
              for (std::int64_t bb = 0; bb < window; ++bb)
                for (std::int64_t cc = 0; cc < w2; ++cc) {
                  const auto ii = static_cast<std::size_t>(
                      (((b * gi.n[0] + o0 * window + a) * gi.n[1] + o1 * window + bb) * gi.n[2] + o2 * w2 + cc) * c + k);
                  const T v = xv[ii];
                  if (is_max) {
                    if (v > best || (v == best && ii < best_i)) {
                      best = v;
                      best_i = ii;
                    }
                  } else {
                    s += v;
                  }
                }
            if (is_max) {
              y[oi] = best;
              (*argmax)[oi] = best_i;
            } else {
              y[oi] = s * inv;
            }
          }

  if (is_max) {
    return tape.record("max_pool", std::move(y), {x}, [x, argmax](Tape<T>& t, const Tensor<T>& dy) {
      if (auto* dx = t.grad_slot(x))
        for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[(*argmax)[i]] += dy[i];
    });
  }
  return tape.record("avg_pool", std::move(y), {x}, [x, gi, go, window, w2, c, inv](Tape<T>& t, const Tensor<T>& dy) {
    auto* dx = t.grad_slot(x);
    if (!dx) return;
    std::size_t oi = 0;
    for (std::int64_t b = 0; b < go.batch; ++b)
      for (std::int64_t o0 = 0; o0 < go.n[0]; ++o0)
        for (std::int64_t o1 = 0; o1 < go.n[1]; ++o1)
          for (std::int64_t o2 = 0; o2 < go.n[2]; ++o2)
            for (std::int64_t k = 0; k < c; ++k, ++oi) {
              const T share = dy[oi] * inv;
              for (std::int64_t a = 0; a < window; ++a)
                for (std::int64_t bb = 0; bb < window; ++bb)
                  for (std::int64_t cc = 0; cc < w2; ++cc)
                    (*dx)[static_cast<std::size_t>(
                        (((b * gi.n[0] + o0 * window + a) * gi.n[1] + o1 * window + bb) * gi.n[2] + o2 * w2 + cc) * c +
                        k)] += share;
            }
  });
}

template <typename T>
Var avg_pool_same(Tape<T>& tape, Var x, int window) {
  const auto& xv = tape.value(x);
  require(window >= 1 && window % 2 == 1, ErrorCode::invalid_argument, "avg_pool_same needs an odd window");
  const Grid3 g = grid_of(xv.shape());
  const std::int64_t h = window / 2;
  const std::int64_t h2 = xv.rank() == 5 ? h : 0;
  const std::int64_t c = g.channels;

  // Each output averages the in-bounds neighbours; weights[o] = 1 / count.
  auto weights = std::make_shared<std::vector<T>>();
  weights->reserve(static_cast<std::size_t>(g.batch * g.n[0] * g.n[1] * g.n[2]));
  Tensor<T> y(xv.shape());

  auto visit = [g, h, h2, c](auto&& fn) {
    std::size_t pos = 0;
    for (std::int64_t b = 0; b < g.batch; ++b)
      for (std::int64_t i0 = 0; i0 < g.n[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < g.n[1]; ++i1)
          for (std::int64_t i2 = 0; i2 < g.n[2]; ++i2, ++pos) {
            const std::int64_t a0 = std::max<std::int64_t>(0, i0 - h), b0 = std::min(g.n[0], i0 + h + 1);
            const std::int64_t a1 = std::max<std::int64_t>(0, i1 - h), b1 = std::min(g.n[1], i1 + h + 1);
            const std::int64_t a2 = std::max<std::int64_t>(0, i2 - h2), b2 = std::min(g.n[2], i2 + h2 + 1);
            const auto out = static_cast<std::size_t>((((b * g.n[0] + i0) * g.n[1] + i1) * g.n[2] + i2) * c);
            fn(pos, out, b, a0, b0, a1, b1, a2, b2);
          }
  };
  auto index = [g, c](std::int64_t b, std::int64_t j0, std::int64_t j1, std::int64_t j2) {
    return static_cast<std::size_t>((((b * g.n[0] + j0) * g.n[1] + j1) * g.n[2] + j2) * c);
  };

  visit([&](std::size_t, std::size_t out, std::int64_t b, std::int64_t a0, std::int64_t b0, std::int64_t a1,
            std::int64_t b1, std::int64_t a2, std::int64_t b2) {
    const T w = T{1} / static_cast<T>((b0 - a0) * (b1 - a1) * (b2 - a2));
    weights->push_back(w);
    for (std::int64_t j0 = a0; j0 < b0; ++j0)
      for (std::int64_t j1 = a1; j1 < b1; ++j1)
        for (std::int64_t j2 = a2; j2 < b2; ++j2) {
          const auto in = index(b, j0, j1, j2);
          for (std::int64_t k = 0; k < c; ++k) y[out + static_cast<std::size_t>(k)] += xv[in + static_cast<std::size_t>(k)];
        }
    for (std::int64_t k = 0; k < c; ++k) y[out + static_cast<std::size_t>(k)] *= w;
  });

  return tape.record("avg_pool_same", std::move(y), {x}, [x, visit, index, weights, c](Tape<T>& t, const Tensor<T>& dy) {
    auto* dx = t.grad_slot(x);
    if (!dx) return;
    visit([&](std::size_t pos, std::size_t out, std::int64_t b, std::int64_t a0, std::int64_t b0, std::int64_t a1,
              std::int64_t b1, std::int64_t a2, std::int64_t b2) {
      const T w = (*weights)[pos];
      for (std::int64_t j0 = a0; j0 < b0; ++j0)
        for (std::int64_t j1 = a1; j1 < b1; ++j1)
          for (std::int64_t j2 = a2; j2 < b2; ++j2) {
            const auto in = index(b, j0, j1, j2);
            for (std::int64_t k = 0; k < c; ++k)
              (*dx)[in + static_cast<std::size_t>(k)] += w * dy[out + static_cast<std::size_t>(k)];
          }
    });
  });
}

template <typename T>
Var hybrid_pool(Tape<T>& tape, Var x) {
  const Var parts[] = {pool(tape, x, PoolMode::max, 2), pool(tape, x, PoolMode::avg, 2)};
  return concat<T>(tape, parts);
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record("relu", std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    if (auto* dx = t.grad_slot(x)) {
      const auto& xv = t.value(x);
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (xv[i] > T{0}) (*dx)[i] += dy[i];
    }
  });
}

template <typename T>
Var softmax(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  require(xv.rank() >= 1, ErrorCode::shape, "softmax needs a channel axis");
  const auto c = static_cast<std::size_t>(xv.channels());
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < y.size(); r += c) {
    T m = xv[r];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, xv[r + k]);
    T s{0};
    for (std::size_t k = 0; k < c; ++k) {
      y[r + k] = std::exp(xv[r + k] - m);
      s += y[r + k];
    }
    for (std::size_t k = 0; k < c; ++k) y[r + k] /= s;
  }
  auto probs = std::make_shared<Tensor<T>>(y);
  return tape.record("softmax", std::move(y), {x}, [x, probs, c](Tape<T>& t, const Tensor<T>& dy) {
    auto* dx = t.grad_slot(x);
    if (!dx) return;
    const auto& p = *probs;
    for (std::size_t r = 0; r < dy.size(); r += c) {
      T dot{0};
      for (std::size_t k = 0; k < c; ++k) dot += dy[r + k] * p[r + k];
      for (std::size_t k = 0; k < c; ++k) (*dx)[r + k] += p[r + k] * (dy[r + k] - dot);
    }
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, bool training, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::invalid_argument, "dropout rate must lie in [0, 1)");
  const auto& xv = tape.value(x);
  if (!training || rate == 0.0) {
    return tape.record("dropout", xv, {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
      if (auto* dx = t.grad_slot(x))
        for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
    });
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(xv.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = u(rng) < rate ? T{0} : scale;
    y[i] = xv[i] * (*mask)[i];
  }
  return tape.record("dropout", std::move(y), {x}, [x, mask](Tape<T>& t, const Tensor<T>& dy) {
    if (auto* dx = t.grad_slot(x))
      for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * (*mask)[i];
  });
}

template <typename T>
Var concat(Tape<T>& tape, std::span<const Var> xs) {
  require(!xs.empty(), ErrorCode::invalid_argument, "concat of an empty list");
  const Shape& first = tape.value(xs[0]).shape();
  require(!first.empty(), ErrorCode::shape, "concat needs a channel axis");
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& v : xs) {
    const Shape& s = tape.value(v).shape();
    require(s.size() == first.size() && std::equal(s.begin(), s.end() - 1, first.begin()), ErrorCode::shape,
            "concat shape mismatch off the channel axis: " + to_string(s) + " vs " + to_string(first));
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor<T> y(out_shape);
  const auto rows = y.size() / static_cast<std::size_t>(total);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& v = tape.value(xs[k]);
    const auto w = static_cast<std::size_t>(widths[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.raw() + r * w, w, y.raw() + r * static_cast<std::size_t>(total) + static_cast<std::size_t>(offset));
    offset += widths[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape.record("concat", std::move(y), inputs, [inputs, widths, total, rows](Tape<T>& t, const Tensor<T>& dy) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto w = static_cast<std::size_t>(widths[k]);
      if (auto* dx = t.grad_slot(inputs[k])) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = dy.raw() + r * static_cast<std::size_t>(total) + static_cast<std::size_t>(offset);
          T* dst = dx->raw() + r * w;
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), ErrorCode::shape, "add shape mismatch");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record("add", std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& dy) {
    for (Var v : {a, b})
      if (auto* d = t.grad_slot(v))
        for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i];
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), ErrorCode::shape, "mul shape mismatch");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return tape.record("mul", std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& dy) {
    if (auto* da = t.grad_slot(a)) {
      const auto& bv = t.value(b);
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
    }
    if (auto* db = t.grad_slot(b)) {
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  T s{0};
  for (auto v : xv.data()) s += v;
  return tape.record("sum", Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    if (auto* dx = t.grad_slot(x))
      for (auto& v : dx->data()) v += dy[0];
  });
}

#define GSEG_INSTANTIATE_OPS(T)                                                   \
  template Var conv(Tape<T>&, Var, Var, Var, int);                                \
  template Var conv_transpose(Tape<T>&, Var, Var, Var);                           \
  template Var pool(Tape<T>&, Var, PoolMode, int);                                \
  template Var avg_pool_same(Tape<T>&, Var, int);                                 \
  template Var hybrid_pool(Tape<T>&, Var);                                        \
  template Var relu(Tape<T>&, Var);                                               \
  template Var softmax(Tape<T>&, Var);                                            \
  template Var dropout(Tape<T>&, Var, double, bool, Rng&);                        \
  template Var concat(Tape<T>&, std::span<const Var>);                            \
  template Var add(Tape<T>&, Var, Var);                                           \
  template Var mul(Tape<T>&, Var, Var);                                           \
  template Var sum(Tape<T>&, Var);

GSEG_INSTANTIATE_OPS(float)
GSEG_INSTANTIATE_OPS(double)

}  // namespace gseg::ops
