#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gseg/dataset.hpp"
#include "gseg/losses.hpp"
#include "gseg/metrics.hpp"
#include "oracle_suites.hpp"

using namespace gseg;
using testsupport::Rng;

namespace {

const double kEqual[4] = {0.25, 0.25, 0.25, 0.25};

// probs/one-hot pair with every voxel's true-class probability fixed at p
std::pair<Tensor<double>, Tensor<double>> with_true_prob(const Shape& spatial, double p, Rng& rng) {
  Shape s = spatial;
  s.push_back(4);
  Tensor<double> probs(s, (1.0 - p) / 3.0), onehot(s, 0.0);
  for (std::size_t v = 0; v < probs.size() / 4; ++v) {
    const auto c = static_cast<std::size_t>(testsupport::uniform_int(rng, 0, 3));
    probs[v * 4 + c] = p;
    onehot[v * 4 + c] = 1.0;
  }
  return {probs, onehot};
}

double focal_value(const Tensor<double>& probs, const Tensor<double>& onehot, double gamma) {
  Tape<double> tape;
  return tape.value(categorical_focal_loss(tape, tape.constant(probs), onehot, {gamma})).item();
}

}  // namespace

TEST_CASE("focal loss closed forms") {
  Rng rng(1);
  auto [p9, g9] = with_true_prob({2, 3}, 0.9, rng);
  CHECK(focal_value(p9, g9, 2.0) == doctest::Approx(0.01 * -std::log(0.9)).epsilon(1e-12));
  CHECK(focal_value(p9, g9, 2.0) == doctest::Approx(0.0010536).epsilon(1e-4));
  auto [p5, g5] = with_true_prob({4}, 0.5, rng);
  CHECK(focal_value(p5, g5, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto [p1, g1] = with_true_prob({4}, 1.0, rng);
  CHECK(focal_value(p1, g1, 2.0) < 1e-12);
}

TEST_CASE("focal with gamma 0 is mean cross-entropy") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto probs_raw = testsupport::random_tensor<double>({3, 3, 4}, rng, 0.01, 1.0);
    Tensor<double> probs = probs_raw, onehot({3, 3, 4});
    double ce = 0.0;
    for (std::size_t v = 0; v < 9; ++v) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += probs_raw[v * 4 + c];
      for (std::size_t c = 0; c < 4; ++c) probs[v * 4 + c] = probs_raw[v * 4 + c] / s;
      const auto t = static_cast<std::size_t>(testsupport::uniform_int(rng, 0, 3));
      onehot[v * 4 + t] = 1.0;
      ce -= std::log(std::clamp(probs[v * 4 + t], 1e-7, 1.0 - 1e-7));
    }
    ce /= 9.0;
    CHECK(std::abs(focal_value(probs, onehot, 0.0) - ce) <= 1e-9);
  }
}

TEST_CASE("soft dice by direct summation") {
  // uniform 0.25 on a 2x2 grid that is entirely class 0
  Tensor<double> probs({2, 2, 4}, 0.25), onehot({2, 2, 4});
  for (std::size_t v = 0; v < 4; ++v) onehot[v * 4] = 1.0;
  const double w[4] = {0.4, 0.3, 0.2, 0.1};
  const double eps = kDiceSmoothing;
  const double d0 = (2.0 * 1.0 + eps) / (1.0 + 4.0 + eps);
  const double dn = eps / (1.0 + eps);
  const double expected = 1.0 - (w[0] * d0 + (w[1] + w[2] + w[3]) * dn);
  Tape<double> tape;
  CHECK(tape.value(soft_dice_loss(tape, tape.constant(probs), onehot, w)).item() ==
        doctest::Approx(expected).epsilon(1e-14));

  Tape<double> t2;
  CHECK(t2.value(soft_dice_loss(t2, t2.constant(onehot), onehot, kEqual)).item() <= 1e-5);
}

TEST_CASE("total loss is dice plus focal, exactly") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto [probs, onehot] = with_true_prob({2, 3, 3}, 0.05 + 0.9 * std::uniform_real_distribution<>(0, 1)(rng), rng);
    Tape<double> tape;
    const auto t = total_loss(tape, tape.constant(probs), onehot, kEqual);
    CHECK(tape.value(t.total).item() == tape.value(t.dice).item() + tape.value(t.focal).item());
    Tape<float> tf;
    const auto pf = probs.cast<float>();
    const auto u = total_loss(tf, tf.constant(pf), onehot.cast<float>(), kEqual);
    CHECK(tf.value(u.total).item() == tf.value(u.dice).item() + tf.value(u.focal).item());
  }
}

TEST_CASE("dice, IoU and accuracy examples") {
  LabelGrid a({2, 2}), b({2, 2});
  a.labels = {1, 1, 0, 0};
  b.labels = {1, 0, 1, 0};
  const auto c = confusion(a, b, 1);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tp + c.fp + c.fn + c.tn == 4);
  CHECK(dice_score(a, b, 1) == 0.5);
  CHECK(dice_score(a, a, 1) == 1.0);
  CHECK(dice_score(a, b, 3) == 1.0);  // absent from both
  LabelGrid d({2, 2});
  d.labels = {0, 0, 1, 1};
  CHECK(dice_score(a, d, 1) == 0.0);
  CHECK(accuracy(a, b) == 0.5);
  LabelGrid e({2, 2});
  e.labels = {1, 1, 0, 1};
  CHECK(accuracy(a, e) == 0.75);

  // IoU of two 2-voxel regions sharing one voxel
  Tensor<double> p({3, 2}, {0.9, 0.1, 0.9, 0.1, 0.1, 0.9}), g({3, 2}, {1, 0, 0, 1, 1, 0});
  // class 0: predicted {0,1}, truth {0,2}
  CHECK(iou_score(p, g).per_class[0] == doctest::Approx(1.0 / 3.0));
  CHECK(iou_score(g, g).mean == 1.0);
}

TEST_CASE("metrics are invariant under a common voxel permutation") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testsupport::random_mask({60}, rng), b = testsupport::random_mask({60}, rng);
    std::vector<std::size_t> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelGrid pa({60}), pb({60});
    for (std::size_t i = 0; i < 60; ++i) {
      pa[i] = a[perm[i]];
      pb[i] = b[perm[i]];
    }
    CHECK(accuracy(a, b) == accuracy(pa, pb));
    for (int c = 0; c < 4; ++c) CHECK(dice_score(a, b, c) == dice_score(pa, pb, c));
  }
}

TEST_CASE("boundary points") {
  LabelGrid cube({5, 5, 5});
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j)
      for (int k = 1; k <= 3; ++k) cube[static_cast<std::size_t>((i * 5 + j) * 5 + k)] = 2;
  const auto b = boundary_points(cube, 2);
  CHECK(b.points.size() == 26);
  CHECK(std::find(b.points.begin(), b.points.end(), Point{2, 2, 2}) == b.points.end());
  CHECK(boundary_points(cube, 1).points.empty());
  LabelGrid single({4, 4, 4});
  single[21] = 3;
  const auto s = boundary_points(single, 3);
  REQUIRE(s.points.size() == 1);
  CHECK(s.points[0] == Point{1, 1, 1});
}

TEST_CASE("averaged Hausdorff") {
  BoundaryPointSet x{1, {{0, 0, 0}}}, y{1, {{3, 4, 0}}};
  CHECK(hausdorff_avg(x, y) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(hausdorff_avg(x, x) == 0.0);
  CHECK_THROWS_AS(hausdorff_avg(x, BoundaryPointSet{}), Error);
  // directed terms differ; the result is their mean
  BoundaryPointSet a{1, {{0, 0, 0}, {10, 0, 0}}}, c{1, {{0, 0, 0}}};
  CHECK(hausdorff_avg(a, c) == doctest::Approx(0.5 * (5.0 + 0.0)));
}

TEST_CASE("metric suite matches brute force") {
  const auto r = testsupport::run_metric_oracle(5, 100);
  INFO(r.first_failure);
  CHECK(r.pairs == 100);
  CHECK(r.count_mismatches == 0);
  CHECK(r.max_value_diff == 0.0);
  CHECK(r.max_distance_diff <= 1e-9);
}

TEST_CASE("metrics report") {
  Rng rng(6);
  const auto gt = testsupport::random_mask({6, 6, 6}, rng);
  const auto perfect = metrics_report(gt, gt);
  for (int c = 0; c < 4; ++c) {
    CHECK(perfect.dice[static_cast<std::size_t>(c)] == 1.0);
    CHECK(perfect.iou[static_cast<std::size_t>(c)] == 1.0);
  }
  for (int c = 1; c < 4; ++c)
    if (perfect.hausdorff[static_cast<std::size_t>(c)]) CHECK(*perfect.hausdorff[static_cast<std::size_t>(c)] == 0.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.mean_dice_foreground == 1.0);

  for (int trial = 0; trial < 30; ++trial) {
    const auto a = testsupport::random_mask({5, 6, 7}, rng), b = testsupport::random_mask({5, 6, 7}, rng);
    const auto r = metrics_report(a, b);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK((r.dice[c] >= 0.0 && r.dice[c] <= 1.0));
      CHECK((r.iou[c] >= 0.0 && r.iou[c] <= 1.0));
      if (r.hausdorff[c]) CHECK(*r.hausdorff[c] >= 0.0);
    }
    CHECK((r.accuracy >= 0.0 && r.accuracy <= 1.0));
    CHECK((r.mean_dice_foreground >= 0.0 && r.mean_dice_foreground <= 1.0));
  }

  // probability-tensor form decodes with argmax and agrees on the hard metrics
  const auto probs = one_hot(gt);
  const auto rp = metrics_report(probs, gt);
  CHECK(rp.mean_dice_all == 1.0);
  CHECK(rp.mean_iou == 1.0);
}

TEST_CASE("report aggregation") {
  MetricsReport a, b;
  a.accuracy = 0.5;
  b.accuracy = 1.0;
  a.hausdorff[1] = 2.0;
  const auto m = mean_report({a, b});
  CHECK(m.accuracy == 0.75);
  CHECK(*m.hausdorff[1] == 2.0);
  CHECK(!m.hausdorff[2]);
  CHECK(stddev_report({a, b}).accuracy == doctest::Approx(0.25));
  CHECK_THROWS_AS(mean_report({}), Error);
}
