#include "gseg/gradcheck.hpp"

#include <cmath>

#include "gseg/losses.hpp"
#include "gseg/ops.hpp"

namespace gseg {

namespace {

double projected(const Tensor<double>& out, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

Tensor<double> uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from zero so the ReLU kink is never straddled.
Tensor<double> away_from_zero(const Shape& shape, Rng& rng) {
  Tensor<double> t = uniform(shape, rng);
  for (auto& v : t.data())
    if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

Tensor<double> random_onehot(const Shape& shape, Rng& rng) {
  Tensor<double> t(shape, 0.0);
  const auto c = static_cast<std::size_t>(shape.back());
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  for (std::size_t i = 0; i < t.size(); i += c) t[i + pick(rng)] = 1.0;
  return t;
}

std::vector<double> random_weights(Rng& rng) {
  std::uniform_real_distribution<double> d(0.1, 1.0);
  std::vector<double> w(4);
  double s = 0.0;
  for (auto& x : w) s += (x = d(rng));
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace

double gradcheck(const GradFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, double h) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.variable(in));
  const Var out = f(tape, vars);
  const Tensor<double> r = uniform(tape.value(out).shape(), rng);
  const Var loss = ops::sum(tape, ops::mul(tape, out, tape.constant(r)));
  tape.backward(loss);

  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return projected(t.value(f(t, vs)), r);
  };

  double diff2 = 0.0, ana2 = 0.0, num2 = 0.0;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<double> zero(xs[i].shape(), 0.0);
    const Tensor<double>* g = &zero;
    Tape<double>& tp = tape;
    if (tp.requires_grad(vars[i])) {
      try {
        g = &tp.grad(vars[i]);
      } catch (const Error&) {
        g = &zero;  // input unreached by the output
      }
    }
    for (std::size_t j = 0; j < xs[i].size(); ++j) {
      const double keep = xs[i][j];
      xs[i][j] = keep + h;
      const double up = evaluate(xs);
      xs[i][j] = keep - h;
      const double down = evaluate(xs);
      xs[i][j] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = (*g)[j];
      diff2 += (analytic - numeric) * (analytic - numeric);
      ana2 += analytic * analytic;
      num2 += numeric * numeric;
    }
  }
  const double scale = std::max(std::sqrt(ana2), std::sqrt(num2));
  return scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  GradcheckReport report;
  auto check = [&](std::string name, const GradFn& f, std::vector<Tensor<double>> inputs) {
    const double e = gradcheck(f, inputs, rng);
    report.max_rel_error = std::max(report.max_rel_error, e);
    report.cases.push_back(GradcheckCase{std::move(name), e});
  };
  using V = std::span<const Var>;
  using T = Tape<double>;

  auto conv_case = [&](std::string name, Shape x, Shape k, int stride) {
    const Shape b{k.back()};
    check(std::move(name), [stride](T& t, V v) { return ops::conv(t, v[0], v[1], v[2], stride); },
          {uniform(x, rng), uniform(k, rng), uniform(b, rng)});
  };
  conv_case("conv3d_k3_s1", {2, 5, 4, 6, 3}, {3, 3, 3, 3, 2}, 1);
  conv_case("conv3d_k3_s2", {1, 6, 5, 4, 2}, {3, 3, 3, 2, 3}, 2);
  conv_case("conv3d_k1", {1, 3, 4, 5, 3}, {1, 1, 1, 3, 2}, 1);
  conv_case("conv3d_1x1x7", {1, 3, 4, 6, 2}, {1, 1, 7, 2, 2}, 1);
  conv_case("conv3d_7x7x1", {1, 6, 5, 2, 2}, {7, 7, 1, 2, 2}, 1);
  conv_case("conv2d_k3_s1", {2, 5, 6, 3}, {3, 3, 3, 4}, 1);
  conv_case("conv2d_k2_s2", {1, 6, 5, 2}, {2, 2, 2, 3}, 2);
  conv_case("conv2d_7x1", {1, 6, 5, 2}, {7, 1, 2, 2}, 1);

  auto convt_case = [&](std::string name, Shape x, Shape k) {
    const Shape b{k.back()};
    check(std::move(name), [](T& t, V v) { return ops::conv_transpose(t, v[0], v[1], v[2]); },
          {uniform(x, rng), uniform(k, rng), uniform(b, rng)});
  };
  convt_case("conv_transpose3d_k2", {1, 3, 2, 3, 2}, {2, 2, 2, 2, 3});
  convt_case("conv_transpose3d_k3", {1, 2, 3, 2, 2}, {3, 3, 3, 2, 2});
  convt_case("conv_transpose2d_k2", {2, 3, 3, 3}, {2, 2, 3, 2});
  convt_case("conv_transpose2d_k3", {1, 3, 2, 2}, {3, 3, 2, 3});

  for (const Shape& x : {Shape{1, 4, 4, 6, 2}, Shape{2, 6, 4, 3}}) {
    const std::string tag = x.size() == 5 ? "3d" : "2d";
    check("max_pool" + tag, [](T& t, V v) { return ops::pool(t, v[0], ops::PoolMode::max); }, {uniform(x, rng)});
    check("avg_pool" + tag, [](T& t, V v) { return ops::pool(t, v[0], ops::PoolMode::avg); }, {uniform(x, rng)});
    check("avg_pool_same" + tag, [](T& t, V v) { return ops::avg_pool_same(t, v[0], 3); }, {uniform(x, rng)});
    check("hybrid_pool" + tag, [](T& t, V v) { return ops::hybrid_pool(t, v[0]); }, {uniform(x, rng)});
  }

  check("relu", [](T& t, V v) { return ops::relu(t, v[0]); }, {away_from_zero({2, 3, 4, 3, 2}, rng)});
  check("softmax3d", [](T& t, V v) { return ops::softmax(t, v[0]); }, {uniform({2, 3, 3, 3, 4}, rng, -2, 2)});
  check("softmax2d", [](T& t, V v) { return ops::softmax(t, v[0]); }, {uniform({1, 5, 4, 4}, rng, -2, 2)});
  check("dropout",
        [](T& t, V v) {
          Rng local(1234);
          return ops::dropout(t, v[0], 0.3, true, local);
        },
        {uniform({2, 4, 3, 3}, rng)});
  check("concat",
        [](T& t, V v) { return ops::concat(t, v); },
        {uniform({1, 3, 2, 4, 2}, rng), uniform({1, 3, 2, 4, 1}, rng), uniform({1, 3, 2, 4, 3}, rng)});
  check("add", [](T& t, V v) { return ops::add(t, v[0], v[1]); }, {uniform({2, 3, 4}, rng), uniform({2, 3, 4}, rng)});
  check("mul", [](T& t, V v) { return ops::mul(t, v[0], v[1]); }, {uniform({2, 3, 4}, rng), uniform({2, 3, 4}, rng)});
  check("sum", [](T& t, V v) { return ops::sum(t, v[0]); }, {uniform({3, 2, 5}, rng)});

  // Loss terms see softmax probabilities so every perturbation stays inside the simplex.
  for (const Shape& s : {Shape{2, 3, 4, 3, 4}, Shape{3, 5, 4, 4}}) {
    const std::string tag = s.size() == 5 ? "3d" : "2d";
    const Tensor<double> target = random_onehot(s, rng);
    const auto w = random_weights(rng);
    check("soft_dice" + tag,
          [target, w](T& t, V v) { return soft_dice_loss(t, ops::softmax(t, v[0]), target, w); },
          {uniform(s, rng, -2, 2)});
    for (double gamma : {0.0, 1.5, 2.0}) {
      check("focal" + tag + "_gamma" + std::to_string(gamma).substr(0, 3),
            [target, gamma](T& t, V v) {
              return categorical_focal_loss(t, ops::softmax(t, v[0]), target, FocalParams{gamma});
            },
            {uniform(s, rng, -2, 2)});
    }
    check("total_loss" + tag,
          [target, w](T& t, V v) { return total_loss(t, ops::softmax(t, v[0]), target, w).total; },
          {uniform(s, rng, -2, 2)});
  }

  // A miniature encoder-decoder: conv, relu, pool, transposed conv, skip concat, head, loss.
  {
    const Tensor<double> target = random_onehot({1, 4, 4, 4}, rng);
    const auto w = random_weights(rng);
    check("composite2d",
          [target, w](T& t, V v) {
            const Var e = ops::relu(t, ops::conv(t, v[0], v[1], v[2]));
            const Var d = ops::conv_transpose(t, ops::pool(t, e, ops::PoolMode::max), v[3], v[4]);
            const std::array<Var, 2> parts{d, e};
            const Var head = ops::conv(t, ops::concat(t, std::span<const Var>(parts)), v[5], v[6]);
            return total_loss(t, ops::softmax(t, head), target, w).total;
          },
          {uniform({1, 4, 4, 2}, rng), uniform({3, 3, 2, 3}, rng), uniform({3}, rng), uniform({2, 2, 3, 3}, rng),
           uniform({3}, rng), uniform({1, 1, 6, 4}, rng), uniform({4}, rng)});
  }
  return report;
}

}  // namespace gseg
