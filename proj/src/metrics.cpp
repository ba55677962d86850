#include "gseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gseg/dataset.hpp"

namespace gseg {

namespace {

void check_same(const LabelGrid& a, const LabelGrid& b) {
  require(a.shape == b.shape, ErrorCode::shape,
          "mask shapes differ: " + to_string(a.shape) + " vs " + to_string(b.shape));
}

constexpr double kFar = 1e20;

// Squared Euclidean distance transform along one line (Felzenszwalb & Huttenlocher).
void distance_1d(std::vector<double>& f, std::vector<double>& d, std::vector<std::int64_t>& v, std::vector<double>& z) {
  const auto n = static_cast<std::int64_t>(f.size());
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::int64_t q = 1; q < n; ++q) {
    auto sq = [&](std::int64_t p) { return f[static_cast<std::size_t>(p)] + static_cast<double>(p * p); };
    double s = (sq(q) - sq(v[static_cast<std::size_t>(k)])) / static_cast<double>(2 * (q - v[static_cast<std::size_t>(k)]));
    while (s <= z[static_cast<std::size_t>(k)]) {
      --k;
      s = (sq(q) - sq(v[static_cast<std::size_t>(k)])) / static_cast<double>(2 * (q - v[static_cast<std::size_t>(k)]));
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k + 1)] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k + 1)] < static_cast<double>(q)) ++k;
    const auto vk = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = static_cast<double>((q - vk) * (q - vk)) + f[static_cast<std::size_t>(vk)];
  }
}

// Squared distance from every grid cell to the nearest seed.
std::vector<double> squared_distance_field(const std::array<std::int64_t, 3>& dims, const std::vector<Point>& seeds,
                                           const Point& origin) {
  const auto total = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  std::vector<double> field(total, kFar);
  auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
    return static_cast<std::size_t>((a * dims[1] + b) * dims[2] + c);
  };
  for (const auto& p : seeds) field[at(p[0] - origin[0], p[1] - origin[1], p[2] - origin[2])] = 0.0;

  const auto longest = static_cast<std::size_t>(std::max({dims[0], dims[1], dims[2]}));
  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<std::int64_t> v(longest);
  for (int axis = 0; axis < 3; ++axis) {
    const auto n = dims[static_cast<std::size_t>(axis)];
    if (n == 1) continue;
    f.resize(static_cast<std::size_t>(n));
    d.resize(static_cast<std::size_t>(n));
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    const int ax1 = (axis + 1) % 3, ax2 = (axis + 2) % 3;
    for (std::int64_t i = 0; i < dims[static_cast<std::size_t>(ax1)]; ++i)
      for (std::int64_t j = 0; j < dims[static_cast<std::size_t>(ax2)]; ++j) {
        std::array<std::int64_t, 3> idx{};
        idx[static_cast<std::size_t>(ax1)] = i;
        idx[static_cast<std::size_t>(ax2)] = j;
        for (std::int64_t q = 0; q < n; ++q) {
          idx[static_cast<std::size_t>(axis)] = q;
          f[static_cast<std::size_t>(q)] = field[at(idx[0], idx[1], idx[2])];
        }
        distance_1d(f, d, v, z);
        for (std::int64_t q = 0; q < n; ++q) {
          idx[static_cast<std::size_t>(axis)] = q;
          field[at(idx[0], idx[1], idx[2])] = d[static_cast<std::size_t>(q)];
        }
      }
  }
  return field;
}

}  // namespace

ConfusionCounts confusion(const LabelGrid& pred, const LabelGrid& gt, int cls) {
  check_same(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls;
    const bool g = gt[i] == cls;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice_from_counts(const ConfusionCounts& c) {
  const auto den = (c.tp + c.fp) + (c.tp + c.fn);
  if (den == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double dice_score(const LabelGrid& pred, const LabelGrid& gt, int cls) { return dice_from_counts(confusion(pred, gt, cls)); }

double accuracy(const LabelGrid& pred, const LabelGrid& gt) {
  check_same(pred, gt);
  require(pred.size() > 0, ErrorCode::shape, "accuracy of an empty mask");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gt[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <typename T>
IouResult iou_score(const Tensor<T>& probs, const Tensor<T>& onehot, double threshold) {
  require(threshold > 0.0 && threshold < 1.0, ErrorCode::invalid_argument, "IoU threshold must lie in (0, 1)");
  require(probs.shape() == onehot.shape(), ErrorCode::shape, "IoU inputs differ in shape");
  const auto c = static_cast<std::size_t>(probs.channels());
  std::vector<std::int64_t> inter(c, 0), uni(c, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool p = static_cast<double>(probs[i]) > threshold;
    const bool g = static_cast<double>(onehot[i]) > threshold;
    inter[i % c] += p && g;
    uni[i % c] += p || g;
  }
  IouResult r;
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class.push_back(uni[k] == 0 ? 1.0 : static_cast<double>(inter[k]) / static_cast<double>(uni[k]));
    r.mean += r.per_class.back();
  }
  r.mean /= static_cast<double>(c);
  return r;
}

BoundaryPointSet boundary_points(const LabelGrid& mask, int cls) {
  require(mask.shape.size() >= 1 && mask.shape.size() <= 3, ErrorCode::shape, "boundary_points supports rank 1-3");
  std::array<std::int64_t, 3> dims{1, 1, 1};
  for (std::size_t a = 0; a < mask.shape.size(); ++a) dims[a] = mask.shape[a];
  const auto rank = mask.shape.size();
  BoundaryPointSet out;
  out.cls = cls;
  auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
    return mask[static_cast<std::size_t>((a * dims[1] + b) * dims[2] + c)];
  };
  for (std::int64_t a = 0; a < dims[0]; ++a)
    for (std::int64_t b = 0; b < dims[1]; ++b)
      for (std::int64_t c = 0; c < dims[2]; ++c) {
        if (at(a, b, c) != cls) continue;
        const Point p{a, b, c};
        bool edge = false;
        for (std::size_t axis = 0; axis < rank && !edge; ++axis) {
          for (int delta : {-1, 1}) {
            Point q = p;
            q[axis] += delta;
            if (q[axis] < 0 || q[axis] >= dims[axis] || at(q[0], q[1], q[2]) != cls) {
              edge = true;
              break;
            }
          }
        }
        if (edge) out.points.push_back(p);
      }
  return out;
}

double hausdorff_avg(const BoundaryPointSet& x, const BoundaryPointSet& y) {
  require(!x.points.empty() && !y.points.empty(), ErrorCode::invalid_argument,
          "averaged Hausdorff distance is undefined for an empty point set");
  Point lo = x.points.front(), hi = x.points.front();
  for (const auto* set : {&x.points, &y.points})
    for (const auto& p : *set)
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
  const std::array<std::int64_t, 3> dims{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  auto directed = [&](const std::vector<Point>& from, const std::vector<Point>& to) {
    const auto field = squared_distance_field(dims, to, lo);
    double s = 0.0;
    for (const auto& p : from)
      s += std::sqrt(field[static_cast<std::size_t>(((p[0] - lo[0]) * dims[1] + (p[1] - lo[1])) * dims[2] + (p[2] - lo[2]))]);
    return s / static_cast<double>(from.size());
  };
  return (directed(x.points, y.points) + directed(y.points, x.points)) / 2.0;
}

MetricsReport metrics_report(const LabelGrid& pred, const LabelGrid& gt) {
  check_same(pred, gt);
  MetricsReport r;
  for (int k = 0; k < kClasses; ++k) {
    const auto counts = confusion(pred, gt, k);
    r.dice[static_cast<std::size_t>(k)] = dice_from_counts(counts);
    const auto uni = counts.tp + counts.fp + counts.fn;
    r.iou[static_cast<std::size_t>(k)] = uni == 0 ? 1.0 : static_cast<double>(counts.tp) / static_cast<double>(uni);
    if (k > 0) {
      const auto bp = boundary_points(pred, k);
      const auto bg = boundary_points(gt, k);
      if (!bp.points.empty() && !bg.points.empty()) r.hausdorff[static_cast<std::size_t>(k)] = hausdorff_avg(bg, bp);
    }
  }
  r.accuracy = accuracy(pred, gt);
  for (int k = 0; k < kClasses; ++k) {
    r.mean_dice_all += r.dice[static_cast<std::size_t>(k)] / kClasses;
    r.mean_iou += r.iou[static_cast<std::size_t>(k)] / kClasses;
    if (k > 0) r.mean_dice_foreground += r.dice[static_cast<std::size_t>(k)] / (kClasses - 1);
  }
  return r;
}

template <typename T>
MetricsReport metrics_report(const Tensor<T>& probs, const LabelGrid& gt) {
  require(probs.channels() == kClasses, ErrorCode::shape, "metrics_report expects 4 class channels");
  const LabelGrid pred = argmax_decode(probs);
  MetricsReport r = metrics_report(pred, gt);
  const auto iou = iou_score(probs, one_hot(gt, kClasses).template cast<T>(), 0.5);
  r.mean_iou = iou.mean;
  for (std::size_t k = 0; k < kClasses; ++k) r.iou[k] = iou.per_class[k];
  return r;
}

namespace {

template <typename Fn>
MetricsReport combine(const std::vector<MetricsReport>& reports, Fn reduce) {
  require(!reports.empty(), ErrorCode::invalid_argument, "no reports to aggregate");
  MetricsReport out;
  auto field = [&](auto getter) {
    std::vector<double> values;
    for (const auto& r : reports) values.push_back(getter(r));
    return reduce(values);
  };
  for (std::size_t k = 0; k < kClasses; ++k) {
    out.dice[k] = field([k](const MetricsReport& r) { return r.dice[k]; });
    out.iou[k] = field([k](const MetricsReport& r) { return r.iou[k]; });
    std::vector<double> hd;
    for (const auto& r : reports)
      if (r.hausdorff[k]) hd.push_back(*r.hausdorff[k]);
    if (!hd.empty()) out.hausdorff[k] = reduce(hd);
  }
  out.accuracy = field([](const MetricsReport& r) { return r.accuracy; });
  out.mean_dice_foreground = field([](const MetricsReport& r) { return r.mean_dice_foreground; });
  out.mean_dice_all = field([](const MetricsReport& r) { return r.mean_dice_all; });
  out.mean_iou = field([](const MetricsReport& r) { return r.mean_iou; });
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

MetricsReport mean_report(const std::vector<MetricsReport>& reports) { return combine(reports, mean_of); }

MetricsReport stddev_report(const std::vector<MetricsReport>& reports) {
  return combine(reports, [](const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
  });
}

template IouResult iou_score(const Tensor<float>&, const Tensor<float>&, double);
template IouResult iou_score(const Tensor<double>&, const Tensor<double>&, double);
template MetricsReport metrics_report(const Tensor<float>&, const LabelGrid&);
template MetricsReport metrics_report(const Tensor<double>&, const LabelGrid&);

}  // namespace gseg
