#include "doctest.h"
#include "oracle_suites.hpp"

using namespace testsupport;

TEST_CASE("convolutions match nested-loop oracles") {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = run_conv_oracle(seed, 50);
    CAPTURE(seed);
    CHECK(r.cases == 100);
    CHECK(r.max_diff_f64 < 1e-10);
    CHECK(r.max_diff_f32 < 1e-5);
  }
}

TEST_CASE("oracle sanity: hand-checked values") {
  // the oracles themselves on a case small enough to do by hand
  // y[i] = x[i-1] + 10 x[i] + 100 x[i+1] + 0.5 on a 3x1 grid
  Tensor<double> x({1, 3, 1, 1}, {1, 2, 3});
  Tensor<double> k({3, 1, 1, 1}, {1, 10, 100});
  const auto y = naive_conv(x, k, Tensor<double>({1}, {0.5}), 1);
  CHECK(y == Tensor<double>({1, 3, 1, 1}, {210.5, 321.5, 32.5}));

  Tensor<double> one({1, 1, 1, 1}, {2.0});
  Tensor<double> k22({2, 2, 1, 1}, {1, 2, 3, 4});
  CHECK(naive_conv_transpose(one, k22, Tensor<double>({1})) == Tensor<double>({1, 2, 2, 1}, {2, 4, 6, 8}));
}

TEST_CASE("stride-2 conv and conv_transpose are adjoint") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = uniform_int(rng, 1, 4);
    const auto kk = uniform_int(rng, 1, 3);
    const auto cs = uniform_int(rng, 1, 3), cb = uniform_int(rng, 1, 3);
    const auto small = random_tensor<double>({1, n, n, n, cs}, rng);
    const auto big = random_tensor<double>({1, 2 * n, 2 * n, 2 * n, cb}, rng);
    // kt: [k,k,k, cs, cb] for the transpose; the matching forward kernel swaps the channel axes
    const auto kt = random_tensor<double>({kk, kk, kk, cs, cb}, rng);
    Tensor<double> kf({kk, kk, kk, cb, cs});
    for (std::int64_t t = 0; t < kk * kk * kk; ++t)
      for (std::int64_t i = 0; i < cs; ++i)
        for (std::int64_t o = 0; o < cb; ++o)
          kf[static_cast<std::size_t>((t * cb + o) * cs + i)] = kt[static_cast<std::size_t>((t * cs + i) * cb + o)];
    const auto up = library_conv(small, kt, Tensor<double>({cb}), 2, true);
    const auto down = library_conv(big, kf, Tensor<double>({cs}), 2, false);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * big[i];
    for (std::size_t i = 0; i < down.size(); ++i) rhs += down[i] * small[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}
