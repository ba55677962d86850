#pragma once

// Evaluation metrics over hard label masks (Dice, accuracy, averaged
// Hausdorff) and thresholded probabilities (IoU).
//
// Perfect-absence convention: Dice and IoU are 1 for a class absent from
// both prediction and ground truth; Hausdorff is skipped for it.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "gseg/labels.hpp"
#include "gseg/network.hpp"

namespace gseg {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

ConfusionCounts confusion(const LabelGrid& pred, const LabelGrid& gt, int cls);

// 2 TP / ((TP + FP) + (TP + FN))
double dice_from_counts(const ConfusionCounts& c);
double dice_score(const LabelGrid& pred, const LabelGrid& gt, int cls);

double accuracy(const LabelGrid& pred, const LabelGrid& gt);

struct IouResult {
  std::vector<double> per_class;
  double mean = 0.0;
};

// probs: [spatial..., C] (or with a leading batch axis); onehot of the same shape.
template <typename T>
IouResult iou_score(const Tensor<T>& probs, const Tensor<T>& onehot, double threshold = 0.5);

using Point = std::array<std::int64_t, 3>;

struct BoundaryPointSet {
  int cls = 0;
  std::vector<Point> points;  // unused trailing coordinates are 0
};

// Voxels of class cls with at least one face neighbour (6-connectivity in
// 3D, 4 in 2D) of another class or outside the grid.
BoundaryPointSet boundary_points(const LabelGrid& mask, int cls);

// (mean_x min_y |x - y| + mean_y min_x |x - y|) / 2, in voxel units.
// Exact via a Euclidean distance transform over the sets' bounding box.
double hausdorff_avg(const BoundaryPointSet& x, const BoundaryPointSet& y);

struct MetricsReport {
  std::array<double, kClasses> dice{};
  std::array<double, kClasses> iou{};
  std::array<std::optional<double>, kClasses> hausdorff{};  // foreground classes only
  double accuracy = 0.0;
  double mean_dice_foreground = 0.0;
  double mean_dice_all = 0.0;
  double mean_iou = 0.0;
};

MetricsReport metrics_report(const LabelGrid& pred, const LabelGrid& gt);

// probs: [spatial..., 4]; predictions are argmax-decoded for the hard metrics.
template <typename T>
MetricsReport metrics_report(const Tensor<T>& probs, const LabelGrid& gt);

// Arithmetic mean of the reports; Hausdorff averages the reports that have it.
MetricsReport mean_report(const std::vector<MetricsReport>& reports);
// Population standard deviation of each field.
MetricsReport stddev_report(const std::vector<MetricsReport>& reports);

}  // namespace gseg
