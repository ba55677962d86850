#include "gseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "gseg/losses.hpp"

namespace gseg {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, purpose, epoch) so a resumed run replays the same draws.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t epoch = 0) {
  return splitmix(splitmix(splitmix(seed) ^ purpose) ^ epoch);
}

enum Purpose : std::uint64_t { kSplit = 1, kAugment = 2, kShuffle = 3, kDropout = 4 };

void check_samples(const TrainConfig& config, std::span<const Sample> samples) {
  require(!samples.empty(), ErrorCode::invalid_argument, "dataset is empty");
  const Shape want{config.spatial, config.spatial, config.spatial, 4};
  for (const auto& s : samples) {
    require(s.x.shape() == want && s.y.shape() == want, ErrorCode::shape,
            "sample " + s.id + " has shape " + to_string(s.x.shape()) + ", expected " + to_string(want));
  }
}

// Training units: the volumes themselves for 3D, their axial slices for 2D.
std::vector<Sample> to_units(const TrainConfig& config, std::span<const Sample> samples) {
  if (config.rank == 3) return {samples.begin(), samples.end()};
  std::vector<Sample> out;
  for (const auto& s : samples) {
    auto slices = slices_2d(s);
    std::move(slices.begin(), slices.end(), std::back_inserter(out));
  }
  return out;
}

template <typename T>
Tensor<T> gather_batch(std::span<const Sample> units, const std::vector<std::size_t>& idx, Tensor<float> Sample::*member) {
  const Tensor<float>& first = units[idx.front()].*member;
  Shape shape{static_cast<std::int64_t>(idx.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor<T> out(shape);
  std::size_t at = 0;
  for (auto i : idx) {
    const Tensor<float>& t = units[i].*member;
    std::copy(t.data().begin(), t.data().end(), out.raw() + at);
    at += t.size();
  }
  return out;
}

struct LightScores {
  double mean_dice = 0.0;
  double accuracy = 0.0;
};

LightScores light_scores(const LabelGrid& pred, const LabelGrid& gt) {
  LightScores s;
  for (int c = 1; c < kClasses; ++c) s.mean_dice += dice_score(pred, gt, c);
  s.mean_dice /= kClasses - 1;
  s.accuracy = accuracy(pred, gt);
  return s;
}

template <typename T>
LabelGrid decode_unit(const Tensor<T>& batch_probs, std::size_t b) {
  return argmax_decode(take(batch_probs, static_cast<std::int64_t>(b)));
}

std::vector<std::size_t> validation_indices(const TrainConfig& config, std::size_t n) {
  auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
  n_val = std::min(n_val, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, kSplit));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n_val);
  std::sort(order.begin(), order.end());
  return order;
}

template <typename T>
Tensor<T> predict_units(const NetworkSpec& net, ParameterStore<T>& params, std::span<const Sample> units, int batch) {
  Tensor<T> out;
  std::size_t at = 0;
  for (const auto& b : make_batches(units.size(), static_cast<std::size_t>(batch), false, 0)) {
    const Tensor<T> part = predict(net, params, gather_batch<T>(units, b, &Sample::x));
    if (at == 0) {
      Shape shape = part.shape();
      shape[0] = static_cast<std::int64_t>(units.size());
      out = Tensor<T>(shape);
    }
    std::copy(part.data().begin(), part.data().end(), out.raw() + at);
    at += part.size();
  }
  return out;
}

template <typename T>
Tensor<float> predict_volume_t(const Model& model, ModelState<T>& st, const Tensor<float>& x) {
  const auto& c = model.config;
  require(x.rank() == 4 && x.channels() == kInputChannels, ErrorCode::shape,
          "predict_volume expects [d0, d1, d2, 4], got " + to_string(x.shape()));
  if (c.rank == 3) {
    Shape batched{1};
    batched.insert(batched.end(), x.shape().begin(), x.shape().end());
    auto probs = predict(model.net, st.params, x.reshaped(batched).template cast<T>());
    return take(probs, 0).template cast<float>();
  }
  Sample vol{"", x, Tensor<float>(x.shape())};
  const auto slices = slices_2d(vol);
  const auto probs = predict_units(model.net, st.params, slices, effective_batch(c));
  std::vector<Sample> out;
  for (std::int64_t k = 0; k < probs.extent(0); ++k) {
    auto p = take(probs, k).template cast<float>();
    out.push_back(Sample{"", p, p});
  }
  return restack_slices(out).x;
}

struct EpochTotals {
  double total = 0.0, dice = 0.0, focal = 0.0, mean_dice = 0.0, accuracy = 0.0;
  std::size_t units = 0;

  void add(const LossTerms& terms, const auto& tape, std::size_t n) {
    total += tape.value(terms.total).item() * static_cast<double>(n);
    dice += tape.value(terms.dice).item() * static_cast<double>(n);
    focal += tape.value(terms.focal).item() * static_cast<double>(n);
  }
  HistoryRow row(int epoch, const char* split, double seconds) const {
    const double n = static_cast<double>(std::max<std::size_t>(units, 1));
    return HistoryRow{epoch, split, total / n, dice / n, focal / n, mean_dice / n, accuracy / n, seconds};
  }
};

template <typename T>
void run_training(Model& m, std::span<const Sample> train_units, std::span<const Sample> val_cases,
                  TrainingHistory& history, const TrainHooks& hooks) {
  auto& st = std::get<ModelState<T>>(m.state);
  const TrainConfig& c = m.config;
  const double drop = effective_dropout(c);
  const auto batch = static_cast<std::size_t>(effective_batch(c));

  std::vector<LabelGrid> masks;
  for (const auto& u : train_units) masks.push_back(argmax_decode(u.y));
  std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
  if (c.class_weighting) weights = compute_class_weights(masks);
  const FocalParams focal{c.gamma};

  const std::vector<Sample> val_units = to_units(c, val_cases);

  for (int epoch = m.epoch; epoch < c.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng drop_rng(derive_seed(c.seed, kDropout, static_cast<std::uint64_t>(epoch)));
    EpochTotals train_totals;
    bool capped = false;
    for (const auto& b : make_batches(train_units.size(), batch, true, derive_seed(c.seed, kShuffle, epoch))) {
      Tape<T> tape;
      const Var x = tape.constant(gather_batch<T>(train_units, b, &Sample::x));
      const Tensor<T> y = gather_batch<T>(train_units, b, &Sample::y);
      const Var probs = forward(m.net, st.params, tape, x, ForwardOptions{true, drop, &drop_rng});
      const LossTerms terms = total_loss(tape, probs, y, weights, focal);
      tape.backward(terms.total);
      adam_step(st.params.items(), st.adam, c.learning_rate);

      train_totals.add(terms, tape, b.size());
      const Tensor<T>& p = tape.value(probs);
      for (std::size_t i = 0; i < b.size(); ++i) {
        const auto s = light_scores(decode_unit(p, i), masks[b[i]]);
        train_totals.mean_dice += s.mean_dice;
        train_totals.accuracy += s.accuracy;
      }
      train_totals.units += b.size();
      if (hooks.on_step) hooks.on_step(StepInfo{st.adam.step, epoch, tape.value(terms.total).item()});
      if (c.max_steps > 0 && st.adam.step >= c.max_steps) {
        capped = true;
        break;
      }
    }
    const double secs =
        c.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    history.rows.push_back(train_totals.row(epoch + 1, "train", secs));
    if (hooks.on_row) hooks.on_row(history.rows.back());

    if (!val_units.empty()) {
      const auto v0 = std::chrono::steady_clock::now();
      EpochTotals val_totals;
      for (const auto& b : make_batches(val_units.size(), batch, false, 0)) {
        Tape<T> tape;
        const Var x = tape.constant(gather_batch<T>(val_units, b, &Sample::x));
        const Var probs = forward(m.net, st.params, tape, x, ForwardOptions{});
        val_totals.add(total_loss(tape, probs, gather_batch<T>(val_units, b, &Sample::y), weights, focal), tape,
                       b.size());
        val_totals.units += b.size();
      }
      // Overlap metrics are scored per case on whole volumes.
      const double n_units = static_cast<double>(val_totals.units);
      for (const auto& vc : val_cases) {
        const auto s = light_scores(argmax_decode(predict_volume_t(m, st, vc.x)), argmax_decode(vc.y));
        val_totals.mean_dice += s.mean_dice * n_units / static_cast<double>(val_cases.size());
        val_totals.accuracy += s.accuracy * n_units / static_cast<double>(val_cases.size());
      }
      const double vsecs =
          c.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - v0).count() : 0.0;
      history.rows.push_back(val_totals.row(epoch + 1, "val", vsecs));
      if (hooks.on_row) hooks.on_row(history.rows.back());
    }

    m.epoch = epoch + 1;
    if (hooks.on_epoch_end) hooks.on_epoch_end(m);
    if (capped) break;
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::int64_t Model::adam_step() const {
  return std::visit([](const auto& st) { return st.adam.step; }, state);
}

Model make_model(const TrainConfig& config) {
  validate_config(config);
  Model m;
  m.config = config;
  m.net = build_network(config.model, config.rank, config.width_scale);
  Shape input{1};
  for (int a = 0; a < config.rank; ++a) input.push_back(config.spatial);
  input.push_back(kInputChannels);
  infer_shapes(m.net, input);
  Rng rng(config.seed);
  if (config.precision == Precision::f32) m.state = ModelState<float>{init_parameters<float>(m.net, rng), {}};
  else m.state = ModelState<double>{init_parameters<double>(m.net, rng), {}};
  return m;
}

std::string history_csv_row(const HistoryRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + fmt(r.total_loss) + "," + fmt(r.dice_loss) + "," +
         fmt(r.focal_loss) + "," + fmt(r.mean_dice) + "," + fmt(r.accuracy) + "," + fmt(r.seconds);
}

std::string history_to_csv(const TrainingHistory& h) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : h.rows) out += history_csv_row(r) + "\n";
  return out;
}

TrainingHistory history_from_csv(std::string_view text) {
  TrainingHistory h;
  bool header = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string line(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      require(line == kHistoryHeader, ErrorCode::format, "history CSV: unexpected header '" + line + "'");
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    require(f.size() == 8, ErrorCode::format, "history CSV line " + std::to_string(line_no) + ": expected 8 fields");
    HistoryRow r;
    try {
      r.epoch = std::stoi(f[0]);
      r.split = f[1];
      r.total_loss = std::stod(f[2]);
      r.dice_loss = std::stod(f[3]);
      r.focal_loss = std::stod(f[4]);
      r.mean_dice = std::stod(f[5]);
      r.accuracy = std::stod(f[6]);
      r.seconds = std::stod(f[7]);
    } catch (const std::logic_error&) {
      fail(ErrorCode::format, "history CSV line " + std::to_string(line_no) + ": malformed number");
    }
    h.rows.push_back(r);
  }
  require(!header, ErrorCode::format, "history CSV: missing header");
  return h;
}

TrainResult train(const TrainConfig& config, std::span<const Sample> samples, std::optional<Model> resume,
                  const TrainHooks& hooks) {
  validate_config(config);
  check_samples(config, samples);
  Model m = resume ? std::move(*resume) : make_model(config);
  if (resume) {
    const auto& r = m.config;
    require(r.model == config.model && r.rank == config.rank && r.width_scale == config.width_scale &&
                r.spatial == config.spatial && r.precision == config.precision,
            ErrorCode::invalid_argument, "resume checkpoint was trained with a different architecture");
    m.config = config;
  }

  const auto val_idx = validation_indices(config, samples.size());
  std::vector<Sample> train_cases, val_cases;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (std::binary_search(val_idx.begin(), val_idx.end(), i) ? val_cases : train_cases).push_back(samples[i]);
  Rng aug_rng(derive_seed(config.seed, kAugment));
  const auto expanded = expand_with_augmentation(train_cases, config.augment_ratio, aug_rng);
  const auto units = to_units(config, expanded);

  TrainingHistory history;
  if (config.precision == Precision::f32) run_training<float>(m, units, val_cases, history, hooks);
  else run_training<double>(m, units, val_cases, history, hooks);
  return TrainResult{std::move(m), std::move(history)};
}

Tensor<float> predict_volume(const Model& model, const Tensor<float>& x) {
  // predict() records on a private tape and leaves the parameters untouched.
  auto& state = const_cast<Model&>(model).state;
  return std::visit([&](auto& st) { return predict_volume_t(model, st, x); }, state);
}

EvalResult evaluate(const Model& model, std::span<const Sample> samples) {
  require(!samples.empty(), ErrorCode::invalid_argument, "evaluation dataset is empty");
  EvalResult r;
  for (const auto& s : samples) {
    r.case_ids.push_back(s.id);
    r.per_case.push_back(metrics_report(predict_volume(model, s.x), argmax_decode(s.y)));
  }
  r.mean = mean_report(r.per_case);
  return r;
}

LabelGrid segment_case(const Model& model, const StudyCase& c) {
  const auto sp = model.config.spatial;
  const Shape target{sp, sp, sp};
  const Sample s = preprocess(c, target);
  const LabelGrid raw = inverse_remap_labels(argmax_decode(predict_volume(model, s.x)));
  const Shape& full = c.flair.shape();
  const auto off = center_crop_offsets(full, target);
  LabelGrid out(full, 0);
  std::size_t src = 0;
  for (std::int64_t i = 0; i < sp; ++i)
    for (std::int64_t j = 0; j < sp; ++j)
      for (std::int64_t k = 0; k < sp; ++k, ++src)
        out[static_cast<std::size_t>(((i + off[0]) * full[1] + (j + off[1])) * full[2] + (k + off[2]))] = raw[src];
  return out;
}

KFoldResult run_kfold(const TrainConfig& config, std::span<const Sample> samples, std::size_t k) {
  KFoldResult r;
  r.plan = k_fold(samples.size(), k, config.seed);
  for (std::size_t f = 0; f < r.plan.folds.size(); ++f) {
    const auto& fold = r.plan.folds[f];
    std::vector<Sample> train_set, test_set;
    for (auto i : fold.train) train_set.push_back(samples[i]);
    for (auto i : fold.test) test_set.push_back(samples[i]);
    TrainConfig fc = config;
    fc.seed = config.seed + f;
    const auto trained = train(fc, train_set);
    r.folds.push_back(evaluate(trained.model, test_set).mean);
  }
  r.mean = mean_report(r.folds);
  r.stddev = stddev_report(r.folds);
  return r;
}

}  // namespace gseg
