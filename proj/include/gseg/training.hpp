#pragma once

// Training loop, evaluation, k-fold harness and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gseg/config.hpp"
#include "gseg/dataset.hpp"
#include "gseg/metrics.hpp"

namespace gseg {

template <typename T>
struct ModelState {
  ParameterStore<T> params;
  AdamState<T> adam;
};

struct Model {
  TrainConfig config;
  NetworkSpec net;
  std::variant<ModelState<float>, ModelState<double>> state;
  int epoch = 0;  // completed epochs

  std::int64_t adam_step() const;
};

// Fresh weights drawn from config.seed.
Model make_model(const TrainConfig& config);

struct HistoryRow {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double total_loss = 0.0;
  double dice_loss = 0.0;
  double focal_loss = 0.0;
  double mean_dice = 0.0;  // foreground classes
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<HistoryRow> rows;
};

inline constexpr const char* kHistoryHeader = "epoch,split,total_loss,dice_loss,focal_loss,mean_dice,accuracy,seconds";

std::string history_csv_row(const HistoryRow& row);
std::string history_to_csv(const TrainingHistory& h);
TrainingHistory history_from_csv(std::string_view text);

struct StepInfo {
  std::int64_t step = 0;  // 1-based optimizer step
  int epoch = 0;
  double total_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const HistoryRow&)> on_row;
  std::function<void(const Model&)> on_epoch_end;
  std::function<void(const StepInfo&)> on_step;
};

struct TrainResult {
  Model model;
  TrainingHistory history;
};

// samples: preprocessed 3D samples [d, d, d, 4]; 2D models train on their
// axial slices. Passing `resume` continues from its stored epoch.
TrainResult train(const TrainConfig& config, std::span<const Sample> samples, std::optional<Model> resume = {},
                  const TrainHooks& hooks = {});

struct EvalResult {
  std::vector<std::string> case_ids;
  std::vector<MetricsReport> per_case;
  MetricsReport mean;
};

// Evaluation-mode forward pass per case; 2D models restack their slice
// predictions into a volume before scoring.
EvalResult evaluate(const Model& model, std::span<const Sample> samples);

// Class-probability volume [d, d, d, 4] for one preprocessed sample.
Tensor<float> predict_volume(const Model& model, const Tensor<float>& x);

// Raw-label mask {0,1,2,4} on the case's original grid; voxels outside the
// centre crop are background.
LabelGrid segment_case(const Model& model, const StudyCase& c);

struct KFoldResult {
  FoldPlan plan;
  std::vector<MetricsReport> folds;
  MetricsReport mean;
  MetricsReport stddev;
};

KFoldResult run_kfold(const TrainConfig& config, std::span<const Sample> samples, std::size_t k = 5);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::byte> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::span<const std::byte> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace gseg
