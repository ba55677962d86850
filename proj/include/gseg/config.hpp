#pragma once

// Training configuration and its plain-text `key = value` form.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gseg/network.hpp"

namespace gseg {

enum class Precision { f32, f64 };

struct TrainConfig {
  ModelKind model = ModelKind::unet;
  int rank = 3;
  int width_scale = 8;
  std::int64_t spatial = 32;  // cubic input extent, power of two >= 16
  int batch = 0;              // 0: 32 for 3D, 100 for 2D
  double learning_rate = 1e-4;
  int epochs = 1;
  std::int64_t max_steps = 0;  // 0: no cap
  double dropout = -1.0;       // negative: 0.2 for 3D, 0.8 for 2D
  double gamma = 2.0;
  bool class_weighting = true;
  double augment_ratio = 0.1;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  bool record_time = true;  // false writes 0 in the seconds column
};

int effective_batch(const TrainConfig& c);
double effective_dropout(const TrainConfig& c);

void validate_config(const TrainConfig& c);

// Throws invalid_argument on an unknown key or malformed value.
void set_config_value(TrainConfig& c, std::string_view key, std::string_view value);

// One `key = value` line per field; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const TrainConfig& c);
// Blank lines and lines starting with '#' are ignored.
TrainConfig parse_config_text(std::string_view text, TrainConfig base = {});
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

bool operator==(const TrainConfig& a, const TrainConfig& b);

// Splits "key = value" lines; shared by the config and checkpoint parsers.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

}  // namespace gseg
