#include "gseg/gseg.h"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gseg/gradcheck.hpp"
#include "gseg/nifti.hpp"
#include "gseg/training.hpp"
#include "json.hpp"

struct gseg_config {
  gseg::TrainConfig config;
};

struct gseg_model {
  gseg::Model model;
};

struct gseg_volume {
  gseg::Tensor<float> voxels;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
gseg_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return GSEG_OK;
  } catch (const gseg::Error& e) {
    g_last_error = e.what();
    return static_cast<gseg_status>(static_cast<int>(e.code()));
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return GSEG_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GSEG_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GSEG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return GSEG_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  gseg::require(p != nullptr, gseg::ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

gseg_status copy_text(const std::string& text, char* buf, std::size_t capacity, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf == nullptr || capacity < text.size() + 1) {
    g_last_error = "buffer too small";
    return buf == nullptr && capacity == 0 ? GSEG_OK : GSEG_ERR_INVALID_ARGUMENT;
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return GSEG_OK;
}

// Exclusive lock file held for the lifetime of a training run.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    gseg::require(fd >= 0, gseg::ErrorCode::io,
                  "output directory " + dir.string() + " is locked by another run (remove " + path_.string() +
                      " if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::vector<gseg::Sample> load_dataset(const std::filesystem::path& dir, std::int64_t spatial) {
  const auto ids = gseg::discover_cases(dir);
  gseg::require(!ids.empty(), gseg::ErrorCode::format, "no cases found under " + dir.string());
  std::vector<gseg::Sample> out;
  for (const auto& id : ids) out.push_back(gseg::preprocess(gseg::read_case(dir, id), {spatial, spatial, spatial}));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto* b = reinterpret_cast<const std::byte*>(text.data());
  gseg::write_file_bytes(path, std::span<const std::byte>(b, text.size()));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void append_metric_rows(std::string& csv, const std::string& id, const gseg::MetricsReport& r) {
  for (int c = 0; c < gseg::kClasses; ++c) {
    csv += id + "," + std::to_string(c) + "," + fmt(r.dice[c]) + "," + fmt(r.iou[c]) + "," +
           (r.hausdorff[c] ? fmt(*r.hausdorff[c]) : std::string()) + "," + fmt(r.accuracy) + "\n";
  }
}

nlohmann::json report_json(const gseg::MetricsReport& r) {
  nlohmann::json hd = nlohmann::json::array();
  for (const auto& h : r.hausdorff) hd.push_back(h ? nlohmann::json(*h) : nlohmann::json(nullptr));
  return {{"dice", r.dice},
          {"iou", r.iou},
          {"hausdorff", hd},
          {"accuracy", r.accuracy},
          {"mean_dice_foreground", r.mean_dice_foreground},
          {"mean_dice_all", r.mean_dice_all},
          {"mean_iou", r.mean_iou}};
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = gseg::read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

extern "C" {

const char* gseg_last_error(void) { return g_last_error.c_str(); }

const char* gseg_version(void) { return "1.0.0"; }

gseg_status gseg_config_create(gseg_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new gseg_config{};
  });
}

void gseg_config_destroy(gseg_config* config) { delete config; }

gseg_status gseg_config_set(gseg_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    gseg::set_config_value(config->config, key, value);
  });
}

gseg_status gseg_config_load_file(gseg_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->config = gseg::load_config_file(path, config->config);
  });
}

gseg_status gseg_config_to_text(const gseg_config* config, char* buf, size_t capacity, size_t* needed) {
  std::string text;
  const auto st = guarded([&] {
    need(config, "config");
    text = gseg::config_to_text(config->config);
  });
  return st != GSEG_OK ? st : copy_text(text, buf, capacity, needed);
}

gseg_status gseg_phantom_dataset(const char* out_dir, int count, int size, uint64_t seed) {
  return guarded([&] {
    need(out_dir, "out_dir");
    gseg::require(count >= 1, gseg::ErrorCode::invalid_argument, "count must be >= 1");
    for (int i = 0; i < count; ++i)
      gseg::write_case(out_dir, gseg::generate_phantom(gseg::dataset_phantom_spec(size, seed, static_cast<std::size_t>(i))));
  });
}

gseg_status gseg_preprocess(const char* dataset_dir, const char* out_dir, int spatial, size_t* n_cases) {
  return guarded([&] {
    need(dataset_dir, "dataset_dir");
    need(out_dir, "out_dir");
    gseg::require(spatial >= 1, gseg::ErrorCode::invalid_argument, "spatial must be >= 1");
    const std::filesystem::path out(out_dir);
    const auto samples = load_dataset(dataset_dir, spatial);
    for (const auto& s : samples) {
      gseg::write_nifti_file(out / s.id / (s.id + "_x.nii"), s.x);
      gseg::write_nifti_file(out / s.id / (s.id + "_y.nii"), s.y, gseg::NiftiWriteOptions{gseg::NiftiType::uint8});
    }
    if (n_cases) *n_cases = samples.size();
  });
}

gseg_status gseg_slices(const char* preprocessed_dir, const char* out_dir, size_t* n_slices) {
  return guarded([&] {
    need(preprocessed_dir, "preprocessed_dir");
    need(out_dir, "out_dir");
    const std::filesystem::path in(preprocessed_dir), out(out_dir);
    gseg::require(std::filesystem::is_directory(in), gseg::ErrorCode::io, in.string() + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(in))
      if (e.is_directory() && std::filesystem::exists(e.path() / (e.path().filename().string() + "_x.nii")))
        ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    gseg::require(!ids.empty(), gseg::ErrorCode::format, "no preprocessed cases under " + in.string());
    std::size_t n = 0;
    for (const auto& id : ids) {
      gseg::Sample s{id, gseg::read_nifti_file(in / id / (id + "_x.nii")).voxels,
                     gseg::read_nifti_file(in / id / (id + "_y.nii")).voxels};
      for (const auto& sl : gseg::slices_2d(s)) {
        gseg::write_nifti_file(out / sl.id / (sl.id + "_x.nii"), sl.x);
        gseg::write_nifti_file(out / sl.id / (sl.id + "_y.nii"), sl.y, gseg::NiftiWriteOptions{gseg::NiftiType::uint8});
        ++n;
      }
    }
    if (n_slices) *n_slices = n;
  });
}

gseg_status gseg_train(const gseg_config* config, const char* dataset_dir, const char* out_dir, int resume) {
  return guarded([&] {
    need(config, "config");
    need(dataset_dir, "dataset_dir");
    need(out_dir, "out_dir");
    const auto& cfg = config->config;
    gseg::validate_config(cfg);
    const std::filesystem::path out(out_dir);
    DirLock lock(out);
    const auto ckpt = out / "checkpoint.gseg";
    const auto hist = out / "history.csv";

    std::optional<gseg::Model> start;
    if (resume && std::filesystem::exists(ckpt)) start = gseg::load_checkpoint(ckpt);
    const auto samples = load_dataset(dataset_dir, cfg.spatial);

    const bool append = start.has_value() && std::filesystem::exists(hist);
    std::ofstream csv(hist, append ? std::ios::app : std::ios::trunc);
    gseg::require(static_cast<bool>(csv), gseg::ErrorCode::io, "cannot write " + hist.string());
    if (!append) csv << gseg::kHistoryHeader << '\n' << std::flush;

    gseg::TrainHooks hooks;
    hooks.on_row = [&](const gseg::HistoryRow& r) { csv << gseg::history_csv_row(r) << '\n' << std::flush; };
    hooks.on_epoch_end = [&](const gseg::Model& m) { gseg::save_checkpoint(m, ckpt); };
    gseg::train(cfg, samples, std::move(start), hooks);
    gseg::require(static_cast<bool>(csv), gseg::ErrorCode::io, "failed writing " + hist.string());
  });
}

gseg_status gseg_kfold(const gseg_config* config, const char* dataset_dir, const char* out_dir, int k) {
  return guarded([&] {
    need(config, "config");
    need(dataset_dir, "dataset_dir");
    need(out_dir, "out_dir");
    gseg::require(k >= 1, gseg::ErrorCode::invalid_argument, "k must be >= 1");
    const std::filesystem::path out(out_dir);
    DirLock lock(out);
    const auto samples = load_dataset(dataset_dir, config->config.spatial);
    const auto r = gseg::run_kfold(config->config, samples, static_cast<std::size_t>(k));
    std::string csv = "fold,mean_dice_foreground,mean_dice_all,mean_iou,accuracy\n";
    auto row = [&](const std::string& name, const gseg::MetricsReport& m) {
      csv += name + "," + fmt(m.mean_dice_foreground) + "," + fmt(m.mean_dice_all) + "," + fmt(m.mean_iou) + "," +
             fmt(m.accuracy) + "\n";
    };
    for (std::size_t f = 0; f < r.folds.size(); ++f) row(std::to_string(f), r.folds[f]);
    row("mean", r.mean);
    row("std", r.stddev);
    write_text(out / "kfold.csv", csv);
  });
}

gseg_status gseg_model_load(const char* checkpoint_path, gseg_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = new gseg_model{gseg::load_checkpoint(checkpoint_path)};
  });
}

void gseg_model_destroy(gseg_model* model) { delete model; }

gseg_status gseg_evaluate(const gseg_model* model, const char* dataset_dir, const char* csv_path, const char* json_path,
                          double* mean_foreground_dice) {
  return guarded([&] {
    need(model, "model");
    need(dataset_dir, "dataset_dir");
    const auto samples = load_dataset(dataset_dir, model->model.config.spatial);
    const auto r = gseg::evaluate(model->model, samples);
    if (csv_path) {
      std::string csv = "case_id,class,dice,iou,hausdorff,accuracy\n";
      for (std::size_t i = 0; i < r.per_case.size(); ++i) append_metric_rows(csv, r.case_ids[i], r.per_case[i]);
      append_metric_rows(csv, "mean", r.mean);
      write_text(csv_path, csv);
    }
    if (json_path) {
      nlohmann::json j;
      j["model"] = std::string(gseg::model_name(model->model.config.model));
      j["rank"] = model->model.config.rank;
      j["cases"] = nlohmann::json::array();
      for (std::size_t i = 0; i < r.per_case.size(); ++i) {
        auto c = report_json(r.per_case[i]);
        c["case_id"] = r.case_ids[i];
        j["cases"].push_back(std::move(c));
      }
      j["mean"] = report_json(r.mean);
      write_text(json_path, j.dump(2) + "\n");
    }
    if (mean_foreground_dice) *mean_foreground_dice = r.mean.mean_dice_foreground;
  });
}

gseg_status gseg_segment(const gseg_model* model, const char* dataset_dir, const char* case_id, const char* out_path) {
  return guarded([&] {
    need(model, "model");
    need(dataset_dir, "dataset_dir");
    need(case_id, "case_id");
    need(out_path, "out_path");
    const auto mask = gseg::segment_case(model->model, gseg::read_case(dataset_dir, case_id));
    gseg::Tensor<float> vox(mask.shape);
    for (std::size_t i = 0; i < mask.size(); ++i) vox[i] = mask[i];
    gseg::write_nifti_file(out_path, vox, gseg::NiftiWriteOptions{gseg::NiftiType::uint8});
  });
}

gseg_status gseg_volume_read(const char* path, gseg_volume** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new gseg_volume{gseg::read_nifti_file(path).voxels};
  });
}

void gseg_volume_destroy(gseg_volume* volume) { delete volume; }

size_t gseg_volume_rank(const gseg_volume* volume) { return volume ? volume->voxels.rank() : 0; }

int64_t gseg_volume_extent(const gseg_volume* volume, size_t axis) {
  if (!volume || axis >= volume->voxels.rank()) return 0;
  return volume->voxels.extent(axis);
}

size_t gseg_volume_size(const gseg_volume* volume) { return volume ? volume->voxels.size() : 0; }

const float* gseg_volume_data(const gseg_volume* volume) { return volume ? volume->voxels.raw() : nullptr; }

gseg_status gseg_gradcheck(uint64_t seed, double* max_rel_error, void (*log)(const char*, void*), void* user) {
  double worst = 0.0;
  const auto st = guarded([&] {
    const auto r = gseg::run_gradcheck_suite(seed);
    for (const auto& c : r.cases) {
      if (!log) break;
      char line[160];
      std::snprintf(line, sizeof line, "%-28s %.3e", c.name.c_str(), c.rel_error);
      log(line, user);
    }
    worst = r.max_rel_error;
    if (max_rel_error) *max_rel_error = worst;
  });
  if (st != GSEG_OK) return st;
  if (!(worst < gseg::kGradcheckTolerance)) {
    g_last_error = "max relative error " + fmt(worst) + " exceeds tolerance " + fmt(gseg::kGradcheckTolerance);
    return GSEG_ERR_CHECK_FAILED;
  }
  return GSEG_OK;
}

gseg_status gseg_report(const char* const* inputs, size_t n_inputs, const char* out_path, size_t* n_rows) {
  return guarded([&] {
    need(inputs, "inputs");
    need(out_path, "out_path");
    gseg::require(n_inputs >= 1, gseg::ErrorCode::invalid_argument, "report needs at least one history file");
    std::string out = std::string("model,") + gseg::kHistoryHeader + "\n";
    std::size_t rows = 0;
    for (std::size_t i = 0; i < n_inputs; ++i) {
      need(inputs[i], "input path");
      const std::filesystem::path p(inputs[i]);
      // Runs are usually <run_dir>/history.csv, so the directory names the curve.
      const std::string label =
          p.filename() == "history.csv" && p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string();
      for (const auto& r : gseg::history_from_csv(read_text(p)).rows) {
        out += label + "," + gseg::history_csv_row(r) + "\n";
        ++rows;
      }
    }
    write_text(out_path, out);
    if (n_rows) *n_rows = rows;
  });
}

gseg_status gseg_network_summary(const char* model, int rank, int width_scale, int spatial, char* buf, size_t capacity,
                                 size_t* needed) {
  std::string text;
  const auto st = guarded([&] {
    need(model, "model");
    const auto net = gseg::build_network(gseg::parse_model_kind(model), rank, width_scale);
    gseg::Shape input{1};
    for (int a = 0; a < rank; ++a) input.push_back(spatial);
    input.push_back(gseg::kInputChannels);
    text = gseg::summary(net, input);
  });
  return st != GSEG_OK ? st : copy_text(text, buf, capacity, needed);
}

}  // extern "C"
