// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance                 run all ten
//   acceptance --criterion N   run only N
//
// Exit status is 0 iff every selected criterion passed.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <unistd.h>

#include "gseg/gradcheck.hpp"
#include "gseg/losses.hpp"
#include "gseg/training.hpp"
#include "oracle_suites.hpp"

using namespace gseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string format(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

// 1 ---------------------------------------------------------------------------
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto r = run_gradcheck_suite(0);
  const double t = seconds_since(t0);
  std::string worst;
  for (const auto& c : r.cases)
    if (c.rel_error == r.max_rel_error) worst = c.name;
  return {r.max_rel_error < 1e-4 && t < 120.0,
          format("%zu cases, max rel err %.2e (%s), %.1fs", r.cases.size(), r.max_rel_error, worst.c_str(), t)};
}

// 2 ---------------------------------------------------------------------------
Outcome conv_oracle() {
  const auto r = testsupport::run_conv_oracle(2024, 50);
  return {r.max_diff_f64 < 1e-10 && r.max_diff_f32 < 1e-5,
          format("%d cases (50 conv + 50 transposed), max |diff| f64 %.2e, f32 %.2e", r.cases, r.max_diff_f64,
                 r.max_diff_f32)};
}

// 3 ---------------------------------------------------------------------------
Outcome shape_contracts() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string bad;
  for (auto kind : {ModelKind::unet, ModelKind::inception_v3, ModelKind::inception_v4, ModelKind::resnet}) {
    const auto net = build_network(kind, 3, 1);
    const auto shapes = infer_shapes(net, {1, 128, 128, 128, 4});
    const bool out_ok = shapes[static_cast<std::size_t>(net.output)] == Shape{1, 128, 128, 128, 4};
    const bool end_ok = shapes[static_cast<std::size_t>(net.encoder_endpoint)] == Shape{1, 8, 8, 8, 256};
    if (!out_ok || !end_ok) {
      ok = false;
      bad += std::string(model_name(kind)) + " ";
    }
  }
  const auto unet = build_unet(3, 1);
  const int enc = count_convolutions(unet, Stage::encoder), dec = count_convolutions(unet, Stage::decoder);
  ok = ok && enc == 15 && dec == 12;
  const double t = seconds_since(t0);
  ok = ok && t < 10.0;
  return {ok, format("4 architectures [1,128,128,128,4] -> same, endpoint [1,8,8,8,256]%s; UNet convs %d/%d; %.2fs",
                     bad.empty() ? "" : (" FAILED for " + bad).c_str(), enc, dec, t)};
}

// 4 ---------------------------------------------------------------------------
Outcome metric_oracle() {
  const auto r = testsupport::run_metric_oracle(99, 100);
  const bool ok = r.pairs == 100 && r.count_mismatches == 0 && r.max_value_diff <= 1e-12 && r.max_distance_diff <= 1e-9;
  return {ok, format("%d mask pairs, %d count/set mismatches, max metric diff %.1e, max distance diff %.1e%s%s", r.pairs,
                     r.count_mismatches, r.max_value_diff, r.max_distance_diff, r.first_failure.empty() ? "" : "; ",
                     r.first_failure.c_str())};
}

// 5 ---------------------------------------------------------------------------
Outcome loss_identities() {
  testsupport::Rng rng(5);
  double ce_gap = 0.0;
  int exact_failures = 0, trials = 0;
  const double w[4] = {0.1, 0.2, 0.3, 0.4};
  for (int t = 0; t < 50; ++t) {
    const Shape s{2, 4, 4, 4};
    auto probs = testsupport::random_tensor<double>(s, rng, 0.01, 1.0);
    Tensor<double> onehot(s);
    double ce = 0.0;
    const std::size_t voxels = probs.size() / 4;
    for (std::size_t v = 0; v < voxels; ++v) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) sum += probs[v * 4 + c];
      for (std::size_t c = 0; c < 4; ++c) probs[v * 4 + c] /= sum;
      const auto k = static_cast<std::size_t>(testsupport::uniform_int(rng, 0, 3));
      onehot[v * 4 + k] = 1.0;
      ce -= std::log(std::clamp(probs[v * 4 + k], 1e-7, 1.0 - 1e-7));
    }
    ce /= static_cast<double>(voxels);
    Tape<double> tape;
    const auto p = tape.constant(probs);
    ce_gap = std::max(ce_gap, std::abs(tape.value(categorical_focal_loss(tape, p, onehot, {0.0})).item() - ce));
    for (double gamma : {0.0, 1.0, 2.0}) {
      const auto l = total_loss(tape, p, onehot, w, {gamma});
      exact_failures += tape.value(l.total).item() != tape.value(l.dice).item() + tape.value(l.focal).item();
      Tape<float> tf;
      const auto lf = total_loss(tf, tf.constant(probs.cast<float>()), onehot.cast<float>(), w, {gamma});
      exact_failures += tf.value(lf.total).item() != tf.value(lf.dice).item() + tf.value(lf.focal).item();
      trials += 2;
    }
  }
  return {ce_gap <= 1e-9 && exact_failures == 0,
          format("focal(gamma=0) vs cross-entropy max gap %.1e; total == dice + focal in %d/%d cases", ce_gap,
                 trials - exact_failures, trials)};
}

// 6, 7 ------------------------------------------------------------------------
struct OverfitRun {
  double fg_dice = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::int64_t steps = 0;
  double seconds = 0.0;
  std::array<double, 4> dice{};
};

OverfitRun overfit(const TrainConfig& c, const std::vector<Sample>& data) {
  OverfitRun r;
  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo& s) {
    if (s.step == 1) r.first_loss = s.total_loss;
    r.last_loss = s.total_loss;
    r.steps = s.step;
  };
  const auto t0 = Clock::now();
  const auto trained = train(c, data, {}, hooks);
  const auto e = evaluate(trained.model, data);
  r.seconds = seconds_since(t0);
  r.fg_dice = e.mean.mean_dice_foreground;
  r.dice = e.mean.dice;
  return r;
}

std::vector<Sample> phantom_samples(std::size_t n, std::int64_t size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(preprocess(generate_phantom(dataset_phantom_spec(size, seed, i)), {size, size, size}));
  return out;
}

Outcome overfit_result(const OverfitRun& r, double threshold) {
  return {r.fg_dice >= threshold && r.seconds <= 600.0 && r.steps <= 300,
          format("fg Dice %.4f (need >= %.2f; per class %.3f/%.3f/%.3f/%.3f), loss %.4f -> %.4f over %lld steps, %.0fs",
                 r.fg_dice, threshold, r.dice[0], r.dice[1], r.dice[2], r.dice[3], r.first_loss, r.last_loss,
                 static_cast<long long>(r.steps), r.seconds)};
}

Outcome overfit_3d() {
  TrainConfig c;
  c.model = ModelKind::unet;
  c.rank = 3;
  c.width_scale = 8;
  c.spatial = 32;
  c.batch = 2;
  c.learning_rate = 1e-4;
  c.epochs = 1000;
  c.max_steps = 300;
  c.val_fraction = 0.0;
  c.augment_ratio = 0.0;
  c.seed = 7;
  c.record_time = false;
  return overfit_result(overfit(c, phantom_samples(2, 32, 1)), 0.95);
}

Outcome overfit_2d() {
  TrainConfig c;
  c.model = ModelKind::resnet;
  c.rank = 2;
  c.width_scale = 8;
  c.spatial = 32;
  c.learning_rate = 1e-4;
  c.epochs = 1000;
  c.max_steps = 300;
  c.val_fraction = 0.0;
  c.augment_ratio = 0.0;
  c.seed = 7;
  c.record_time = false;
  return overfit_result(overfit(c, phantom_samples(1, 32, 1)), 0.90);
}

// 8 ---------------------------------------------------------------------------
Outcome pipeline_properties() {
  testsupport::Rng rng(8);
  std::vector<std::string> failures;

  // slicing
  for (int t = 0; t < 5; ++t) {
    const Shape sp{testsupport::uniform_int(rng, 1, 8), testsupport::uniform_int(rng, 1, 8),
                   testsupport::uniform_int(rng, 1, 8)};
    Shape xs = sp;
    xs.push_back(4);
    const Sample s{"v", testsupport::random_tensor<float>(xs, rng), one_hot(testsupport::random_mask(sp, rng))};
    const auto sl = slices_2d(s);
    const auto back = restack_slices(sl);
    if (static_cast<std::int64_t>(sl.size()) != sp[2] || !(back.x == s.x) || !(back.y == s.y))
      failures.push_back("slice/restack");
  }

  // k-fold partitions
  for (std::size_t n = 5; n <= 50; ++n) {
    const auto plan = k_fold(n, 5, n);
    std::vector<int> seen(n, 0);
    std::size_t lo = n, hi = 0;
    for (const auto& f : plan.folds) {
      for (auto i : f.test) ++seen[i];
      lo = std::min(lo, f.test.size());
      hi = std::max(hi, f.test.size());
      if (f.train.size() + f.test.size() != n) failures.push_back("k_fold train/test sizes n=" + std::to_string(n));
      std::set<std::size_t> u(f.train.begin(), f.train.end());
      u.insert(f.test.begin(), f.test.end());
      if (u.size() != n) failures.push_back("k_fold complement n=" + std::to_string(n));
    }
    if (plan.folds.size() != 5 || hi - lo > 1 || std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; }))
      failures.push_back("k_fold partition n=" + std::to_string(n));
  }

  // involutions
  const Sample s{"a", testsupport::random_tensor<float>({6, 6, 6, 4}, rng),
                 one_hot(testsupport::random_mask({6, 6, 6}, rng))};
  for (int axis = 0; axis < 3; ++axis) {
    Transform f{Transform::Kind::flip};
    f.axis = axis;
    const auto twice = augment(augment(s, f), f);
    if (!(twice.x == s.x) || !(twice.y == s.y)) failures.push_back("flip involution");
  }
  for (auto plane : {std::array<int, 2>{0, 1}, std::array<int, 2>{0, 2}, std::array<int, 2>{1, 2}}) {
    Transform r{Transform::Kind::rot90};
    r.plane = plane;
    Sample x = s;
    for (int i = 0; i < 4; ++i) x = augment(x, r);
    if (!(x.x == s.x) || !(x.y == s.y)) failures.push_back("rot90 order 4");
  }
  {
    Transform tr{Transform::Kind::transpose};
    tr.permutation = {1, 0, 2};
    const auto twice = augment(augment(s, tr), tr);
    if (!(twice.x == s.x)) failures.push_back("transpose involution");
  }

  // expansion ratio
  std::vector<Sample> many(100, Sample{"c", Tensor<float>({2, 2, 2, 4}), one_hot(LabelGrid({2, 2, 2}))});
  for (std::size_t n : {1u, 7u, 14u, 15u, 50u, 100u}) {
    Rng r(3);
    const auto e = expand_with_augmentation(std::span<const Sample>(many.data(), n), 0.10, r);
    if (e.size() != n + static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))))
      failures.push_back("expansion size n=" + std::to_string(n));
  }

  return {failures.empty(), failures.empty() ? "slicing, k-fold (n=5..50), flip/rot90/transpose involutions, 10% expansion"
                                             : std::to_string(failures.size()) + " failures, first: " + failures[0]};
}

// 9 ---------------------------------------------------------------------------
Outcome nifti_round_trip() {
  const auto r = testsupport::run_nifti_suite(9, 20, 10000);
  const bool ok = r.round_trip_failures == 0 && r.swapped_fixture_ok && r.fuzz_unstructured == 0 && r.fuzz_inputs == 10000;
  return {ok, format("%d volumes, %d round-trip failures, byte-swapped fixture %s; fuzz %d inputs: %d rejected, %d "
                     "accepted, %d unstructured%s%s",
                     r.volumes, r.round_trip_failures, r.swapped_fixture_ok ? "ok" : "FAILED", r.fuzz_inputs,
                     r.fuzz_rejected, r.fuzz_accepted, r.fuzz_unstructured, r.first_failure.empty() ? "" : "; ",
                     r.first_failure.c_str())};
}

// 10 --------------------------------------------------------------------------
std::vector<std::pair<std::string, std::vector<std::byte>>> dir_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::vector<std::byte>>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), read_file_bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome determinism() {
  const auto data = phantom_samples(3, 16, 4);
  TrainConfig c;
  c.spatial = 16;
  c.batch = 2;
  c.epochs = 2;
  c.augment_ratio = 0.5;
  c.val_fraction = 0.34;
  c.seed = 11;
  c.record_time = false;
  const auto a = train(c, data), b = train(c, data);
  const bool hist = history_to_csv(a.history) == history_to_csv(b.history);
  const bool ckpt = serialize_checkpoint(a.model) == serialize_checkpoint(b.model);
  auto c64 = c;
  c64.precision = Precision::f64;
  c64.rank = 2;
  c64.model = ModelKind::resnet;
  c64.epochs = 1;
  c64.max_steps = 2;
  const bool ckpt2d = serialize_checkpoint(train(c64, data).model) == serialize_checkpoint(train(c64, data).model);

  const auto root = fs::temp_directory_path() / ("gseg_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  for (const char* d : {"a", "b"})
    for (std::size_t i = 0; i < 3; ++i) write_case(root / d, generate_phantom(dataset_phantom_spec(24, 5, i)));
  const auto da = dir_bytes(root / "a");
  const bool phantoms = da.size() == 15 && da == dir_bytes(root / "b");
  fs::remove_all(root);
  return {hist && ckpt && ckpt2d && phantoms,
          format("histories %s, 3D checkpoints %s, 2D binary64 checkpoints %s, phantom datasets %s",
                 hist ? "identical" : "DIFFER", ckpt ? "identical" : "DIFFER", ckpt2d ? "identical" : "DIFFER",
                 phantoms ? "identical" : "DIFFER")};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient suite vs finite differences", gradient_suite},
      {2, "convolution oracle", conv_oracle},
      {3, "architecture shape contracts", shape_contracts},
      {4, "metric oracle suite", metric_oracle},
      {5, "loss identities", loss_identities},
      {6, "3D UNet overfit", overfit_3d},
      {7, "2D ResNet overfit", overfit_2d},
      {8, "pipeline properties", pipeline_properties},
      {9, "NIfTI round trip and fuzz", nifti_round_trip},
      {10, "determinism", determinism},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }
  if (only < 0 || only > 10) {
    std::fprintf(stderr, "criterion must be 1..10\n");
    return 2;
  }
  int failed = 0;
  for (const auto& c : all) {
    if (only != 0 && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d: %s  %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.title, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
