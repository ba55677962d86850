#pragma once

// Generators and brute-force oracles shared by the unit and acceptance tests.
// Nothing here calls into the library's own kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "gseg/labels.hpp"
#include "gseg/tensor.hpp"

namespace testsupport {

using gseg::Shape;
using gseg::Tensor;
using Rng = std::mt19937_64;

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Row-major strides of a shape.
inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t a = s.size(); a-- > 1;) st[a - 1] = st[a] * s[a];
  return st;
}

// Pads a rank-2 or rank-3 spatial description to three axes.
struct Dims3 {
  std::array<std::int64_t, 3> n{1, 1, 1};
};

inline Dims3 spatial3(const Shape& s, std::size_t first, std::size_t count) {
  Dims3 d;
  for (std::size_t a = 0; a < count; ++a) d.n[a] = s[first + a];
  return d;
}

// Direct same-padded cross-correlation, one output element at a time.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, int stride) {
  const std::size_t r = x.rank() - 2;
  const auto ci_n = x.shape().back();
  const auto co_n = k.shape().back();
  const Dims3 in = spatial3(x.shape(), 1, r), ks = spatial3(k.shape(), 0, r);
  Dims3 out, lo;
  lo.n = {0, 0, 0};
  for (std::size_t a = 0; a < r; ++a) {
    out.n[a] = (in.n[a] + stride - 1) / stride;
    const auto total = std::max<std::int64_t>((out.n[a] - 1) * stride + ks.n[a] - in.n[a], 0);
    lo.n[a] = total / 2;
  }
  Shape os{x.shape()[0]};
  for (std::size_t a = 0; a < r; ++a) os.push_back(out.n[a]);
  os.push_back(co_n);
  Tensor<T> y(os);
  const auto xs = strides_of(x.shape());
  const auto ys = strides_of(os);
  const auto kst = strides_of(k.shape());
  for (std::int64_t b = 0; b < x.shape()[0]; ++b)
    for (std::int64_t o0 = 0; o0 < out.n[0]; ++o0)
      for (std::int64_t o1 = 0; o1 < out.n[1]; ++o1)
        for (std::int64_t o2 = 0; o2 < out.n[2]; ++o2)
          for (std::int64_t co = 0; co < co_n; ++co) {
            double acc = static_cast<double>(bias[static_cast<std::size_t>(co)]);
            for (std::int64_t t0 = 0; t0 < ks.n[0]; ++t0)
              for (std::int64_t t1 = 0; t1 < ks.n[1]; ++t1)
                for (std::int64_t t2 = 0; t2 < ks.n[2]; ++t2) {
                  const std::int64_t p[3] = {o0 * stride - lo.n[0] + t0, o1 * stride - lo.n[1] + t1,
                                             o2 * stride - lo.n[2] + t2};
                  bool inside = true;
                  for (std::size_t a = 0; a < 3; ++a) inside = inside && p[a] >= 0 && p[a] < in.n[a];
                  if (!inside) continue;
                  const std::int64_t t[3] = {t0, t1, t2};
                  for (std::int64_t ci = 0; ci < ci_n; ++ci) {
                    std::int64_t xo = b * xs[0] + ci, ko = ci * kst[r] + co;
                    for (std::size_t a = 0; a < r; ++a) {
                      xo += p[a] * xs[a + 1];
                      ko += t[a] * kst[a];
                    }
                    acc += static_cast<double>(x[static_cast<std::size_t>(xo)]) *
                           static_cast<double>(k[static_cast<std::size_t>(ko)]);
                  }
                }
            std::int64_t yo = b * ys[0] + co;
            const std::int64_t o[3] = {o0, o1, o2};
            for (std::size_t a = 0; a < r; ++a) yo += o[a] * ys[a + 1];
            y[static_cast<std::size_t>(yo)] = static_cast<T>(acc);
          }
  return y;
}

// Stride-2 transposed convolution by scattering every input element through
// the kernel. Positions are offset by the low padding of the stride-2 "same"
// convolution that maps the doubled grid back onto the input grid.
template <typename T>
Tensor<T> naive_conv_transpose(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
  const std::size_t r = x.rank() - 2;
  const auto ci_n = x.shape().back();
  const auto co_n = k.shape().back();
  const Dims3 in = spatial3(x.shape(), 1, r), ks = spatial3(k.shape(), 0, r);
  Dims3 out, lo;
  lo.n = {0, 0, 0};
  for (std::size_t a = 0; a < r; ++a) {
    out.n[a] = 2 * in.n[a];
    lo.n[a] = std::max<std::int64_t>(ks.n[a] - 2, 0) / 2;
  }
  Shape os{x.shape()[0]};
  for (std::size_t a = 0; a < r; ++a) os.push_back(out.n[a]);
  os.push_back(co_n);
  std::vector<double> acc(static_cast<std::size_t>(gseg::element_count(os)), 0.0);
  const auto xs = strides_of(x.shape());
  const auto ys = strides_of(os);
  const auto kst = strides_of(k.shape());
  for (std::int64_t b = 0; b < x.shape()[0]; ++b)
    for (std::int64_t q0 = 0; q0 < in.n[0]; ++q0)
      for (std::int64_t q1 = 0; q1 < in.n[1]; ++q1)
        for (std::int64_t q2 = 0; q2 < in.n[2]; ++q2)
          for (std::int64_t t0 = 0; t0 < ks.n[0]; ++t0)
            for (std::int64_t t1 = 0; t1 < ks.n[1]; ++t1)
              for (std::int64_t t2 = 0; t2 < ks.n[2]; ++t2) {
                const std::int64_t q[3] = {q0, q1, q2}, t[3] = {t0, t1, t2};
                std::int64_t p[3];
                bool inside = true;
                for (std::size_t a = 0; a < 3; ++a) {
                  p[a] = a < r ? 2 * q[a] - lo.n[a] + t[a] : 0;
                  inside = inside && p[a] >= 0 && p[a] < out.n[a];
                }
                if (!inside) continue;
                for (std::int64_t ci = 0; ci < ci_n; ++ci)
                  for (std::int64_t co = 0; co < co_n; ++co) {
                    std::int64_t xo = b * xs[0] + ci, ko = ci * kst[r] + co, yo = b * ys[0] + co;
                    for (std::size_t a = 0; a < r; ++a) {
                      xo += q[a] * xs[a + 1];
                      ko += t[a] * kst[a];
                      yo += p[a] * ys[a + 1];
                    }
                    acc[static_cast<std::size_t>(yo)] += static_cast<double>(x[static_cast<std::size_t>(xo)]) *
                                                          static_cast<double>(k[static_cast<std::size_t>(ko)]);
                  }
              }
  Tensor<T> y(os);
  for (std::size_t i = 0; i < acc.size(); ++i)
    y[i] = static_cast<T>(acc[i] + static_cast<double>(bias[i % static_cast<std::size_t>(co_n)]));
  return y;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// ---- masks and metric oracles ------------------------------------------------

// Blobby random class mask: a few random boxes painted over noise-free background.
inline gseg::LabelGrid random_mask(const Shape& shape, Rng& rng, int classes = 4) {
  gseg::LabelGrid m(shape, 0);
  const auto st = strides_of(shape);
  const int boxes = static_cast<int>(uniform_int(rng, 0, 4));
  for (int b = 0; b < boxes; ++b) {
    std::vector<std::int64_t> lo(shape.size()), hi(shape.size());
    for (std::size_t a = 0; a < shape.size(); ++a) {
      lo[a] = uniform_int(rng, 0, shape[a] - 1);
      hi[a] = uniform_int(rng, lo[a], shape[a] - 1);
    }
    const auto cls = static_cast<std::uint8_t>(uniform_int(rng, 1, classes - 1));
    for (std::size_t i = 0; i < m.size(); ++i) {
      bool in = true;
      for (std::size_t a = 0; a < shape.size(); ++a) {
        const auto c = (static_cast<std::int64_t>(i) / st[a]) % shape[a];
        in = in && c >= lo[a] && c <= hi[a];
      }
      if (in) m[i] = cls;
    }
  }
  // sprinkle a few isolated voxels so boundaries are irregular
  const auto sprinkles = uniform_int(rng, 0, 6);
  for (std::int64_t s = 0; s < sprinkles; ++s)
    m[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(m.size()) - 1))] =
        static_cast<std::uint8_t>(uniform_int(rng, 0, classes - 1));
  return m;
}

inline std::array<std::int64_t, 3> coords_of(const Shape& shape, std::size_t i) {
  std::array<std::int64_t, 3> c{0, 0, 0};
  const auto st = strides_of(shape);
  for (std::size_t a = 0; a < shape.size(); ++a) c[a] = (static_cast<std::int64_t>(i) / st[a]) % shape[a];
  return c;
}

// Voxels of cls that touch another class or the grid edge across a face.
inline std::vector<std::array<std::int64_t, 3>> brute_boundary(const gseg::LabelGrid& m, int cls) {
  std::vector<std::array<std::int64_t, 3>> pts;
  const auto& s = m.shape;
  const auto st = strides_of(s);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != cls) continue;
    const auto c = coords_of(s, i);
    bool edge = false;
    for (std::size_t a = 0; a < s.size() && !edge; ++a)
      for (int d : {-1, 1}) {
        const auto n = c[a] + d;
        if (n < 0 || n >= s[a]) {
          edge = true;
          break;
        }
        if (m[static_cast<std::size_t>(static_cast<std::int64_t>(i) + d * st[a])] != cls) {
          edge = true;
          break;
        }
      }
    if (edge) pts.push_back(c);
  }
  return pts;
}

inline double brute_hausdorff_avg(const std::vector<std::array<std::int64_t, 3>>& x,
                                  const std::vector<std::array<std::int64_t, 3>>& y) {
  auto directed = [](const auto& a, const auto& b) {
    double total = 0.0;
    for (const auto& p : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : b) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) d2 += static_cast<double>((p[k] - q[k]) * (p[k] - q[k]));
        best = std::min(best, std::sqrt(d2));
      }
      total += best;
    }
    return total / static_cast<double>(a.size());
  };
  return 0.5 * (directed(x, y) + directed(y, x));
}

}  // namespace testsupport
