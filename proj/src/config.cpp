#include "gseg/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gseg {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    fail(ErrorCode::invalid_argument, "config key '" + std::string(key) + "': expected an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  // from_chars for double is missing from older libstdc++; strtod with a full-consumption check.
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    fail(ErrorCode::invalid_argument, "config key '" + std::string(key) + "': expected a number, got '" + s + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::invalid_argument, "config key '" + std::string(key) + "': expected a boolean, got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int effective_batch(const TrainConfig& c) {
  if (c.batch > 0) return c.batch;
  return c.rank == 2 ? 100 : 32;
}

double effective_dropout(const TrainConfig& c) {
  if (c.dropout >= 0.0) return c.dropout;
  return c.rank == 2 ? 0.8 : 0.2;
}

void validate_config(const TrainConfig& c) {
  require(c.rank == 2 || c.rank == 3, ErrorCode::invalid_argument, "rank must be 2 or 3");
  require(c.width_scale >= 1 && 16 % c.width_scale == 0, ErrorCode::invalid_argument,
          "width_scale must divide 16, got " + std::to_string(c.width_scale));
  require(c.spatial >= 16 && (c.spatial & (c.spatial - 1)) == 0, ErrorCode::invalid_argument,
          "spatial extent must be a power of two >= 16, got " + std::to_string(c.spatial));
  require(c.batch >= 0, ErrorCode::invalid_argument, "batch must be >= 1");
  require(c.learning_rate > 0 && std::isfinite(c.learning_rate), ErrorCode::invalid_argument, "learning rate must be > 0");
  require(c.epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
  require(c.max_steps >= 0, ErrorCode::invalid_argument, "max_steps must be >= 0");
  require(effective_dropout(c) < 1.0, ErrorCode::invalid_argument, "dropout must lie in [0, 1)");
  require(c.gamma >= 0, ErrorCode::invalid_argument, "gamma must be >= 0");
  require(c.augment_ratio >= 0, ErrorCode::invalid_argument, "augment_ratio must be >= 0");
  require(c.val_fraction >= 0 && c.val_fraction < 1, ErrorCode::invalid_argument, "val_fraction must lie in [0, 1)");
}

void set_config_value(TrainConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view v = trim(raw);
  if (key == "model") c.model = parse_model_kind(v);
  else if (key == "rank") {
    if (v == "2" || v == "2d" || v == "2D") c.rank = 2;
    else if (v == "3" || v == "3d" || v == "3D") c.rank = 3;
    else fail(ErrorCode::invalid_argument, "config key 'rank': expected 2d or 3d, got '" + std::string(v) + "'");
  } else if (key == "width_scale") c.width_scale = parse_int<int>(key, v);
  else if (key == "spatial") c.spatial = parse_int<std::int64_t>(key, v);
  else if (key == "batch") c.batch = parse_int<int>(key, v);
  else if (key == "lr" || key == "learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "epochs") c.epochs = parse_int<int>(key, v);
  else if (key == "max_steps") c.max_steps = parse_int<std::int64_t>(key, v);
  else if (key == "dropout") c.dropout = parse_double(key, v);
  else if (key == "gamma") c.gamma = parse_double(key, v);
  else if (key == "class_weighting") c.class_weighting = parse_bool(key, v);
  else if (key == "augment_ratio") c.augment_ratio = parse_double(key, v);
  else if (key == "val_fraction") c.val_fraction = parse_double(key, v);
  else if (key == "seed") c.seed = parse_int<std::uint64_t>(key, v);
  else if (key == "precision") {
    if (v == "f32" || v == "float32") c.precision = Precision::f32;
    else if (v == "f64" || v == "float64") c.precision = Precision::f64;
    else fail(ErrorCode::invalid_argument, "config key 'precision': expected f32 or f64, got '" + std::string(v) + "'");
  } else if (key == "record_time") c.record_time = parse_bool(key, v);
  else fail(ErrorCode::invalid_argument, "unknown config key '" + std::string(key) + "'");
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "model = " << model_name(c.model) << '\n'
      << "rank = " << c.rank << "d\n"
      << "width_scale = " << c.width_scale << '\n'
      << "spatial = " << c.spatial << '\n'
      << "batch = " << c.batch << '\n'
      << "lr = " << fmt_double(c.learning_rate) << '\n'
      << "epochs = " << c.epochs << '\n'
      << "max_steps = " << c.max_steps << '\n'
      << "dropout = " << fmt_double(c.dropout) << '\n'
      << "gamma = " << fmt_double(c.gamma) << '\n'
      << "class_weighting = " << (c.class_weighting ? "true" : "false") << '\n'
      << "augment_ratio = " << fmt_double(c.augment_ratio) << '\n'
      << "val_fraction = " << fmt_double(c.val_fraction) << '\n'
      << "seed = " << c.seed << '\n'
      << "precision = " << (c.precision == Precision::f32 ? "f32" : "f64") << '\n'
      << "record_time = " << (c.record_time ? "true" : "false") << '\n';
  return out.str();
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorCode::invalid_argument,
            "config line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::invalid_argument, "config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

TrainConfig parse_config_text(std::string_view text, TrainConfig base) {
  for (const auto& [k, v] : parse_key_values(text)) set_config_value(base, k, v);
  return base;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

bool operator==(const TrainConfig& a, const TrainConfig& b) { return config_to_text(a) == config_to_text(b); }

}  // namespace gseg
