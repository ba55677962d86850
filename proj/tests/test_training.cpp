#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "gseg/training.hpp"

using namespace gseg;

namespace {

std::vector<Sample> phantoms(std::size_t n, std::int64_t size = 16, std::uint64_t seed = 1) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(preprocess(generate_phantom(dataset_phantom_spec(size, seed, i)), {size, size, size}));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.spatial = 16;
  c.batch = 2;
  c.record_time = false;
  c.seed = 3;
  return c;
}

bool same_params(const Model& a, const Model& b) { return serialize_checkpoint(a) == serialize_checkpoint(b); }

ErrorCode load_error(const std::vector<std::byte>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::internal;
}

}  // namespace

TEST_CASE("config text round trip and validation") {
  TrainConfig c = small_config();
  c.model = ModelKind::resnet;
  c.rank = 2;
  c.learning_rate = 3.3e-4;
  c.gamma = 1.5;
  c.precision = Precision::f64;
  CHECK(parse_config_text(config_to_text(c)) == c);
  CHECK(effective_batch(TrainConfig{}) == 32);
  TrainConfig two;
  two.rank = 2;
  CHECK(effective_batch(two) == 100);
  CHECK(effective_dropout(two) == 0.8);
  CHECK(effective_dropout(TrainConfig{}) == 0.2);

  TrainConfig bad = c;
  bad.spatial = 24;
  CHECK_THROWS_AS(validate_config(bad), Error);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(validate_config(bad), Error);
  CHECK_THROWS_AS(set_config_value(bad, "colour", "red"), Error);
  CHECK_THROWS_AS(set_config_value(bad, "rank", "4"), Error);
  set_config_value(bad, "rank", "3d");
  CHECK(bad.rank == 3);
  const auto parsed = parse_config_text("# comment\n\nmodel = inception_v3\nseed = 7\n");
  CHECK(parsed.model == ModelKind::inception_v3);
  CHECK(parsed.seed == 7);
}

TEST_CASE("one epoch on two phantoms") {
  const auto data = phantoms(2);
  auto c = small_config();
  const auto r = train(c, data);
  REQUIRE(r.history.rows.size() == 1);
  const auto& row = r.history.rows[0];
  CHECK(row.epoch == 1);
  CHECK(row.split == "train");
  CHECK(std::isfinite(row.total_loss));
  CHECK(row.total_loss == doctest::Approx(row.dice_loss + row.focal_loss));
  CHECK(row.seconds == 0.0);
  CHECK(r.model.epoch == 1);
  CHECK(r.model.adam_step() == 1);
}

TEST_CASE("validation rows and history CSV") {
  const auto data = phantoms(4);
  auto c = small_config();
  c.val_fraction = 0.25;
  c.epochs = 2;
  const auto r = train(c, data);
  REQUIRE(r.history.rows.size() == 4);
  CHECK(r.history.rows[0].split == "train");
  CHECK(r.history.rows[1].split == "val");
  CHECK(r.history.rows[2].epoch == 2);
  for (const auto& row : r.history.rows) {
    CHECK(std::isfinite(row.total_loss));
    CHECK(std::isfinite(row.mean_dice));
  }
  const auto csv = history_to_csv(r.history);
  CHECK(csv.rfind(kHistoryHeader, 0) == 0);
  const auto back = history_from_csv(csv);
  REQUIRE(back.rows.size() == 4);
  CHECK(history_to_csv(back) == csv);
}

TEST_CASE("training is deterministic") {
  const auto data = phantoms(3);
  auto c = small_config();
  c.epochs = 2;
  c.augment_ratio = 0.5;
  c.val_fraction = 0.34;
  const auto a = train(c, data), b = train(c, data);
  CHECK(history_to_csv(a.history) == history_to_csv(b.history));
  CHECK(same_params(a.model, b.model));
  c.seed = 4;
  CHECK_FALSE(same_params(a.model, train(c, data).model));
}

TEST_CASE("2D training on slices") {
  const auto data = phantoms(1);
  auto c = small_config();
  c.rank = 2;
  c.model = ModelKind::resnet;
  c.batch = 8;
  c.max_steps = 1;
  c.epochs = 3;
  const auto r = train(c, data);
  CHECK(r.model.adam_step() == 1);
  const auto e = evaluate(r.model, data);
  CHECK(e.per_case.size() == 1);
  CHECK(predict_volume(r.model, data[0].x).shape() == Shape{16, 16, 16, 4});
}

TEST_CASE("evaluation") {
  const auto data = phantoms(2);
  const auto m = make_model(small_config());
  const auto a = evaluate(m, data), b = evaluate(m, data);
  CHECK(a.case_ids == std::vector<std::string>{"case_000", "case_001"});
  CHECK(a.mean.mean_dice_foreground == b.mean.mean_dice_foreground);
  CHECK(a.mean.accuracy == doctest::Approx((a.per_case[0].accuracy + a.per_case[1].accuracy) / 2));
  CHECK_THROWS_AS(evaluate(m, std::span<const Sample>{}), Error);
  CHECK_THROWS_AS(train(small_config(), std::span<const Sample>{}), Error);
  // wrong spatial extent
  CHECK_THROWS_AS(train(small_config(), phantoms(1, 32)), Error);
}

TEST_CASE("segment_case returns raw labels on the original grid") {
  const auto m = make_model(small_config());
  const auto c = generate_phantom(dataset_phantom_spec(20, 1, 0));
  const auto mask = segment_case(m, c);
  CHECK(mask.shape == Shape{20, 20, 20});
  for (auto l : mask.labels) CHECK((l == 0 || l == 1 || l == 2 || l == 4));
}

TEST_CASE("k-fold harness") {
  const auto data = phantoms(5);
  auto c = small_config();
  c.val_fraction = 0;
  const auto r = run_kfold(c, data, 5);
  REQUIRE(r.folds.size() == 5);
  double sum = 0.0;
  for (const auto& f : r.folds) sum += f.mean_dice_foreground;
  CHECK(std::abs(r.mean.mean_dice_foreground - sum / 5.0) <= 1e-9);
  for (const auto& f : r.plan.folds) CHECK(f.test.size() == 1);
  CHECK_THROWS_AS(run_kfold(c, phantoms(4), 5), Error);
}

TEST_CASE("checkpoints") {
  const auto data = phantoms(2);
  auto c = small_config();
  const auto trained = train(c, data).model;
  const auto bytes = serialize_checkpoint(trained);
  CHECK(std::memcmp(bytes.data(), "GSEG", 4) == 0);

  const auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.epoch == 1);
  CHECK(back.adam_step() == 1);
  CHECK(back.config == trained.config);
  const auto& p0 = std::get<ModelState<float>>(trained.state).params;
  const auto& p1 = std::get<ModelState<float>>(back.state).params;
  REQUIRE(p0.size() == p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p0.items()[i].value == p1.items()[i].value);

  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() / 2] ^= std::byte{0x10};
    CHECK(load_error(bad) == ErrorCode::checksum);
  }
  SUBCASE("future version") {
    auto bad = bytes;
    const std::uint32_t v = 999;
    std::memcpy(bad.data() + 4, &v, 4);
    CHECK(load_error(bad) == ErrorCode::version);
  }
  SUBCASE("truncated") {
    for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
      auto bad = bytes;
      bad.resize(n);
      CHECK(load_error(bad) != ErrorCode::internal);
    }
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK(load_error(bad) == ErrorCode::format);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "gseg_ckpt_test" / "m.gseg";
    save_checkpoint(trained, path);
    CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
    std::filesystem::remove_all(path.parent_path());
  }
}

TEST_CASE("double precision checkpoints") {
  auto c = small_config();
  c.precision = Precision::f64;
  const auto m = make_model(c);
  const auto bytes = serialize_checkpoint(m);
  CHECK(serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes);
}

TEST_CASE("resuming matches an uninterrupted run") {
  const auto data = phantoms(2);
  auto c = small_config();
  c.epochs = 2;
  const auto straight = train(c, data);

  auto first = c;
  first.epochs = 1;
  const auto half = train(first, data);
  const auto restored = deserialize_checkpoint(serialize_checkpoint(half.model));
  const auto rest = train(c, data, restored);

  CHECK(same_params(straight.model, rest.model));
  REQUIRE(rest.history.rows.size() == 1);
  CHECK(rest.history.rows[0].epoch == 2);
  CHECK(history_csv_row(rest.history.rows[0]) == history_csv_row(straight.history.rows[1]));
  auto other = c;
  other.width_scale = 4;
  CHECK_THROWS_AS(train(other, data, deserialize_checkpoint(serialize_checkpoint(half.model))), Error);
}

TEST_CASE("history CSV rejects malformed input") {
  CHECK_THROWS_AS(history_from_csv("nope\n"), Error);
  CHECK_THROWS_AS(history_from_csv(std::string(kHistoryHeader) + "\n1,train,x,0,0,0,0,0\n"), Error);
}
