#include "gseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gseg/nifti.hpp"

namespace gseg {

namespace {

constexpr std::array<const char*, 4> kModalityNames{"flair", "t1", "t1ce", "t2"};

Shape spatial_of(const Tensor<float>& t) { return Shape(t.shape().begin(), t.shape().end() - 1); }

// Advance a row-major multi-index; returns false after the last one.
bool next_index(std::vector<std::int64_t>& idx, const Shape& shape) {
  for (std::size_t a = shape.size(); a-- > 0;) {
    if (++idx[a] < shape[a]) return true;
    idx[a] = 0;
  }
  return false;
}

std::size_t row_major(const std::vector<std::int64_t>& idx, const Shape& shape) {
  std::size_t off = 0;
  for (std::size_t a = 0; a < shape.size(); ++a) off = off * static_cast<std::size_t>(shape[a]) + static_cast<std::size_t>(idx[a]);
  return off;
}

// Gathers a channels-last tensor through a map from output spatial index to
// source spatial index.
template <typename Map>
Tensor<float> gather_spatial(const Tensor<float>& in, const Shape& out_spatial, Map&& source_of) {
  const Shape in_spatial = spatial_of(in);
  const auto c = static_cast<std::size_t>(in.channels());
  Shape out_shape = out_spatial;
  out_shape.push_back(in.channels());
  Tensor<float> out(out_shape);
  if (out.size() == 0) return out;
  std::vector<std::int64_t> o(out_spatial.size(), 0), s(in_spatial.size(), 0);
  std::size_t dst = 0;
  do {
    source_of(o, s);
    const std::size_t src = row_major(s, in_spatial) * c;
    std::copy_n(in.raw() + src, c, out.raw() + dst);
    dst += c;
  } while (next_index(o, out_spatial));
  return out;
}

Tensor<float> flip_axis(const Tensor<float>& t, int axis) {
  const Shape sp = spatial_of(t);
  return gather_spatial(t, sp, [&](const auto& o, auto& s) {
    s = o;
    s[axis] = sp[axis] - 1 - o[axis];
  });
}

// One counter-clockwise quarter turn in the (p, q) plane.
Tensor<float> quarter_turn(const Tensor<float>& t, int p, int q) {
  const Shape sp = spatial_of(t);
  Shape out = sp;
  std::swap(out[p], out[q]);
  return gather_spatial(t, out, [&](const auto& o, auto& s) {
    s = o;
    s[p] = o[q];
    s[q] = sp[q] - 1 - o[p];
  });
}

Tensor<float> roll(const Tensor<float>& t, const std::vector<std::int64_t>& offsets) {
  const Shape sp = spatial_of(t);
  return gather_spatial(t, sp, [&](const auto& o, auto& s) {
    for (std::size_t a = 0; a < sp.size(); ++a) {
      const auto v = (o[a] + offsets[a]) % sp[a];
      s[a] = v < 0 ? v + sp[a] : v;
    }
  });
}

Tensor<float> apply_transform(const Tensor<float>& t, const Transform& tr) {
  const auto rank = static_cast<int>(t.rank()) - 1;
  require(rank >= 1, ErrorCode::shape, "augment needs a channels-last tensor with spatial axes");
  switch (tr.kind) {
    case Transform::Kind::flip:
      require(tr.axis >= 0 && tr.axis < rank, ErrorCode::invalid_argument, "flip axis out of range");
      return flip_axis(t, tr.axis);
    case Transform::Kind::rot90: {
      const auto [p, q] = tr.plane;
      require(p >= 0 && q >= 0 && p < rank && q < rank && p != q, ErrorCode::invalid_argument,
              "rot90 plane must name two distinct spatial axes");
      require(t.shape()[static_cast<std::size_t>(p)] == t.shape()[static_cast<std::size_t>(q)],
              ErrorCode::invalid_argument, "rot90 needs a square plane so the grid keeps its shape");
      Tensor<float> out = t;
      for (int i = 0; i < ((tr.k % 4) + 4) % 4; ++i) out = quarter_turn(out, p, q);
      return out;
    }
    case Transform::Kind::transpose: {
      auto perm = tr.permutation;
      require(perm.size() == static_cast<std::size_t>(rank), ErrorCode::invalid_argument,
              "transpose permutation must cover every spatial axis");
      auto sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i)
        require(sorted[i] == i, ErrorCode::invalid_argument, "transpose permutation is not a permutation");
      for (std::size_t i = 0; i < perm.size(); ++i)
        require(t.shape()[perm[i]] == t.shape()[i], ErrorCode::invalid_argument,
                "transpose may only swap axes of equal extent");
      perm.push_back(static_cast<std::size_t>(rank));
      return permute_axes(t, perm);
    }
    case Transform::Kind::shift:
      require(tr.offsets.size() == static_cast<std::size_t>(rank), ErrorCode::invalid_argument,
              "shift needs one offset per spatial axis");
      return roll(t, tr.offsets);
  }
  fail(ErrorCode::internal, "unknown transform");
}

}  // namespace

// ---- preprocessing --------------------------------------------------------

VoxelGrid min_max_normalize(const VoxelGrid& v) {
  VoxelGrid out(v.shape(), 0.0f);
  if (v.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const double lo = *lo_it, hi = *hi_it;
  require(std::isfinite(lo) && std::isfinite(hi), ErrorCode::invalid_argument, "min_max_normalize: non-finite voxels");
  if (hi == lo) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = std::clamp(static_cast<float>((v[i] - lo) / range), 0.0f, 1.0f);
  return out;
}

std::vector<std::int64_t> center_crop_offsets(const Shape& source, const Shape& target) {
  require(source.size() == target.size(), ErrorCode::shape,
          "crop target " + to_string(target) + " does not match source rank " + to_string(source));
  std::vector<std::int64_t> off(source.size());
  for (std::size_t a = 0; a < source.size(); ++a) {
    require(target[a] >= 1 && target[a] <= source[a], ErrorCode::shape,
            "crop target " + to_string(target) + " exceeds source " + to_string(source));
    off[a] = (source[a] - target[a]) / 2;
  }
  return off;
}

namespace {

template <typename Get, typename Put>
void crop_copy(const Shape& source, const Shape& target, Get&& get, Put&& put) {
  const auto off = center_crop_offsets(source, target);
  std::vector<std::int64_t> o(target.size(), 0), s(target.size());
  std::size_t dst = 0;
  do {
    for (std::size_t a = 0; a < o.size(); ++a) s[a] = o[a] + off[a];
    put(dst++, get(row_major(s, source)));
  } while (next_index(o, target));
}

}  // namespace

VoxelGrid center_crop(const VoxelGrid& v, const Shape& target) {
  VoxelGrid out(target);
  crop_copy(v.shape(), target, [&](std::size_t i) { return v[i]; }, [&](std::size_t i, float x) { out[i] = x; });
  return out;
}

LabelGrid center_crop(const LabelGrid& m, const Shape& target) {
  LabelGrid out(target);
  crop_copy(m.shape, target, [&](std::size_t i) { return m[i]; }, [&](std::size_t i, std::uint8_t x) { out[i] = x; });
  return out;
}

LabelGrid remap_labels(const LabelGrid& raw) {
  LabelGrid out = raw;
  for (auto& l : out.labels) {
    if (l == 4) l = 3;
    else if (l > 2) fail(ErrorCode::invalid_argument, "unexpected mask label " + std::to_string(l));
  }
  return out;
}

LabelGrid inverse_remap_labels(const LabelGrid& classes) {
  LabelGrid out = classes;
  for (auto& l : out.labels) {
    if (l == 3) l = 4;
    else if (l > 3) fail(ErrorCode::invalid_argument, "class index " + std::to_string(l) + " out of range");
  }
  return out;
}

Tensor<float> one_hot(const LabelGrid& mask, int n_classes) {
  require(n_classes >= 1, ErrorCode::invalid_argument, "one_hot needs at least one class");
  Shape shape = mask.shape;
  shape.push_back(n_classes);
  Tensor<float> out(shape, 0.0f);
  const auto c = static_cast<std::size_t>(n_classes);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] >= n_classes)
      fail(ErrorCode::invalid_argument, "label " + std::to_string(mask[i]) + " >= n_classes " + std::to_string(n_classes));
    out[i * c + mask[i]] = 1.0f;
  }
  return out;
}

template <typename T>
LabelGrid argmax_decode(const Tensor<T>& probs) {
  require(probs.rank() >= 2, ErrorCode::shape, "argmax_decode expects [spatial..., C]");
  const auto c = static_cast<std::size_t>(probs.channels());
  require(c >= 1 && c <= 255, ErrorCode::shape, "argmax_decode: bad channel count");
  LabelGrid out(Shape(probs.shape().begin(), probs.shape().end() - 1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* p = probs.raw() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (p[k] > p[best]) best = k;
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template LabelGrid argmax_decode<float>(const Tensor<float>&);
template LabelGrid argmax_decode<double>(const Tensor<double>&);

Tensor<float> stack_modalities(const StudyCase& c) {
  const std::array<const VoxelGrid*, 4> mods{&c.flair, &c.t1, &c.t1ce, &c.t2};
  const Shape& shape = c.flair.shape();
  for (std::size_t m = 1; m < mods.size(); ++m)
    require(mods[m]->shape() == shape, ErrorCode::shape,
            std::string("modality ") + kModalityNames[m] + " has shape " + to_string(mods[m]->shape()) +
                ", expected " + to_string(shape));
  Shape out_shape = shape;
  out_shape.push_back(4);
  Tensor<float> out(out_shape);
  for (std::size_t i = 0; i < c.flair.size(); ++i)
    for (std::size_t m = 0; m < 4; ++m) out[i * 4 + m] = (*mods[m])[i];
  return out;
}

Sample preprocess(const StudyCase& c, const Shape& target) {
  require(c.mask.shape == c.flair.shape(), ErrorCode::shape, "mask shape differs from the modalities");
  StudyCase n;
  n.id = c.id;
  n.flair = center_crop(min_max_normalize(c.flair), target);
  n.t1 = center_crop(min_max_normalize(c.t1), target);
  n.t1ce = center_crop(min_max_normalize(c.t1ce), target);
  n.t2 = center_crop(min_max_normalize(c.t2), target);
  const LabelGrid classes = remap_labels(center_crop(c.mask, target));
  return Sample{c.id, stack_modalities(n), one_hot(classes, 4)};
}

// ---- class weights --------------------------------------------------------

std::array<std::int64_t, 4> class_counts(std::span<const LabelGrid> class_masks) {
  require(!class_masks.empty(), ErrorCode::invalid_argument, "class weights need at least one mask");
  std::array<std::int64_t, 4> counts{};
  for (const auto& m : class_masks)
    for (auto l : m.labels) {
      if (l > 3) fail(ErrorCode::invalid_argument, "class index " + std::to_string(l) + " out of range");
      ++counts[l];
    }
  return counts;
}

std::array<double, 4> class_weights_from_counts(const std::array<std::int64_t, 4>& counts) {
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  require(total > 0, ErrorCode::invalid_argument, "class weights need at least one voxel");
  std::array<double, 4> w{};
  double sum = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double f = counts[c] > 0 ? static_cast<double>(counts[c]) / total : kAbsentClassFrequency;
    w[c] = 1.0 / f;
    sum += w[c];
  }
  for (auto& x : w) x /= sum;
  return w;
}

std::array<double, 4> compute_class_weights(std::span<const LabelGrid> class_masks) {
  return class_weights_from_counts(class_counts(class_masks));
}

// ---- augmentation ---------------------------------------------------------

Sample augment(const Sample& s, const Transform& t) {
  require(spatial_of(s.x) == spatial_of(s.y), ErrorCode::shape, "augment: x and y grids differ");
  return Sample{s.id, apply_transform(s.x, t), apply_transform(s.y, t)};
}

Transform random_transform(std::size_t spatial_rank, const Shape& spatial, Rng& rng) {
  require(spatial_rank >= 1 && spatial.size() == spatial_rank, ErrorCode::invalid_argument,
          "random_transform: spatial rank mismatch");
  // Rotations and transposes only touch axes of equal extent so batch shapes survive.
  std::vector<std::array<int, 2>> square_planes;
  for (std::size_t p = 0; p < spatial_rank; ++p)
    for (std::size_t q = p + 1; q < spatial_rank; ++q)
      if (spatial[p] == spatial[q]) square_planes.push_back({static_cast<int>(p), static_cast<int>(q)});

  Transform t;
  std::uniform_int_distribution<int> family(0, 3);
  switch (family(rng)) {
    case 0: t.kind = Transform::Kind::rot90; break;
    case 1: t.kind = Transform::Kind::flip; break;
    case 2: t.kind = Transform::Kind::transpose; break;
    default: t.kind = Transform::Kind::shift; break;
  }
  if ((t.kind == Transform::Kind::rot90 || t.kind == Transform::Kind::transpose) && square_planes.empty())
    t.kind = Transform::Kind::flip;

  switch (t.kind) {
    case Transform::Kind::rot90: {
      t.k = std::uniform_int_distribution<int>(1, 3)(rng);
      t.plane = square_planes[std::uniform_int_distribution<std::size_t>(0, square_planes.size() - 1)(rng)];
      break;
    }
    case Transform::Kind::flip:
      t.axis = std::uniform_int_distribution<int>(0, static_cast<int>(spatial_rank) - 1)(rng);
      break;
    case Transform::Kind::transpose: {
      const auto plane = square_planes[std::uniform_int_distribution<std::size_t>(0, square_planes.size() - 1)(rng)];
      t.permutation.resize(spatial_rank);
      std::iota(t.permutation.begin(), t.permutation.end(), std::size_t{0});
      std::swap(t.permutation[plane[0]], t.permutation[plane[1]]);
      break;
    }
    case Transform::Kind::shift:
      for (auto e : spatial) t.offsets.push_back(std::uniform_int_distribution<std::int64_t>(0, e - 1)(rng));
      break;
  }
  return t;
}

std::vector<Sample> expand_with_augmentation(std::span<const Sample> samples, double ratio, Rng& rng) {
  require(ratio >= 0.0 && std::isfinite(ratio), ErrorCode::invalid_argument, "augmentation ratio must be >= 0");
  std::vector<Sample> out(samples.begin(), samples.end());
  if (samples.empty()) return out;
  const auto extra = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(samples.size())));
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  for (std::size_t i = 0; i < extra; ++i) {
    const Sample& src = samples[pick(rng)];
    const Shape sp = spatial_of(src.x);
    Sample a = augment(src, random_transform(sp.size(), sp, rng));
    a.id = src.id + "_aug" + std::to_string(i);
    out.push_back(std::move(a));
  }
  return out;
}

// ---- 2D slicing -----------------------------------------------------------

namespace {

Tensor<float> plane_of(const Tensor<float>& t, std::int64_t k) {
  const auto& s = t.shape();
  const std::int64_t d0 = s[0], d1 = s[1], d2 = s[2], c = s[3];
  Tensor<float> out(Shape{d0, d1, c});
  for (std::int64_t i = 0; i < d0; ++i)
    for (std::int64_t j = 0; j < d1; ++j)
      std::copy_n(t.raw() + ((i * d1 + j) * d2 + k) * c, c, out.raw() + (i * d1 + j) * c);
  return out;
}

}  // namespace

std::vector<Sample> slices_2d(const Sample& volume) {
  require(volume.x.rank() == 4 && volume.y.rank() == 4, ErrorCode::shape,
          "slices_2d expects [d0, d1, d2, C] samples, got " + to_string(volume.x.shape()));
  require(spatial_of(volume.x) == spatial_of(volume.y), ErrorCode::shape, "slices_2d: x and y grids differ");
  std::vector<Sample> out;
  const auto depth = volume.x.extent(2);
  out.reserve(static_cast<std::size_t>(depth));
  for (std::int64_t k = 0; k < depth; ++k)
    out.push_back(Sample{volume.id + "_s" + std::to_string(k), plane_of(volume.x, k), plane_of(volume.y, k)});
  return out;
}

Sample restack_slices(std::span<const Sample> slices) {
  require(!slices.empty(), ErrorCode::invalid_argument, "restack_slices needs at least one slice");
  auto restack = [&](auto member) {
    const Tensor<float>& first = slices.front().*member;
    require(first.rank() == 3, ErrorCode::shape, "restack_slices expects [d0, d1, C] slices");
    const std::int64_t d0 = first.extent(0), d1 = first.extent(1), c = first.extent(2);
    const auto d2 = static_cast<std::int64_t>(slices.size());
    Tensor<float> out(Shape{d0, d1, d2, c});
    for (std::int64_t k = 0; k < d2; ++k) {
      const Tensor<float>& sl = slices[static_cast<std::size_t>(k)].*member;
      require(sl.shape() == first.shape(), ErrorCode::shape, "restack_slices: slice shapes differ");
      for (std::int64_t i = 0; i < d0; ++i)
        for (std::int64_t j = 0; j < d1; ++j)
          std::copy_n(sl.raw() + (i * d1 + j) * c, c, out.raw() + ((i * d1 + j) * d2 + k) * c);
    }
    return out;
  };
  std::string id = slices.front().id;
  if (const auto cut = id.rfind("_s"); cut != std::string::npos) id.resize(cut);
  return Sample{id, restack(&Sample::x), restack(&Sample::y)};
}

// ---- batching and folds ---------------------------------------------------

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed) {
  require(batch_size >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

FoldPlan k_fold(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(k >= 1, ErrorCode::invalid_argument, "k_fold needs k >= 1");
  require(k <= n, ErrorCode::invalid_argument,
          "k_fold: k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " cases");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  FoldPlan plan;
  plan.seed = seed;
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    Fold fold;
    fold.test.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + size));
    std::sort(fold.test.begin(), fold.test.end());
    for (std::size_t i = 0; i < n; ++i)
      if (!std::binary_search(fold.test.begin(), fold.test.end(), i)) fold.train.push_back(i);
    plan.folds.push_back(std::move(fold));
    start += size;
  }
  return plan;
}

// ---- phantoms -------------------------------------------------------------

PhantomSpec default_phantom_spec(std::int64_t size, std::uint64_t seed) {
  require(size >= 4, ErrorCode::invalid_argument, "phantom size must be >= 4");
  PhantomSpec s;
  const double n = static_cast<double>(size);
  s.size = size;
  s.center = {-1.0, -1.0, -1.0};
  s.outer = {0.30 * n, 0.25 * n, 0.22 * n};
  s.middle = {0.18 * n, 0.15 * n, 0.13 * n};
  s.core = {0.09 * n, 0.08 * n, 0.07 * n};
  // Loosely MRI-like contrast: oedema bright on FLAIR and T2, enhancing core bright on T1CE,
  // necrotic core dark on T1 and T1CE.
  s.modalities = {ModalityMap{100.0f, {0.0f, 150.0f, 500.0f, 300.0f}},
                  ModalityMap{500.0f, {0.0f, -250.0f, -100.0f, -50.0f}},
                  ModalityMap{300.0f, {0.0f, -100.0f, 50.0f, 500.0f}},
                  ModalityMap{200.0f, {0.0f, 500.0f, 400.0f, 250.0f}}};
  s.noise_sigma = 25.0;
  s.seed = seed;
  return s;
}

PhantomSpec dataset_phantom_spec(std::int64_t size, std::uint64_t seed, std::size_t index) {
  PhantomSpec s = default_phantom_spec(size, seed);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x9e37u};
  Rng rng(seq);
  const double n = static_cast<double>(size);
  std::uniform_real_distribution<double> jitter(-0.05 * n, 0.05 * n);
  std::uniform_real_distribution<double> scale(0.9, 1.1);
  const double centre = (n - 1.0) / 2.0;
  for (std::size_t a = 0; a < 3; ++a) {
    s.center[a] = centre + jitter(rng);
    // One factor per axis keeps the three ellipsoids nested.
    const double f = scale(rng);
    s.outer[a] *= f;
    s.middle[a] *= f;
    s.core[a] *= f;
  }
  s.seed = rng();
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03zu", index);
  s.id = buf;
  return s;
}

StudyCase generate_phantom(const PhantomSpec& spec) {
  require(spec.size >= 1, ErrorCode::invalid_argument, "phantom size must be positive");
  require(spec.noise_sigma >= 0.0 && std::isfinite(spec.noise_sigma), ErrorCode::invalid_argument,
          "phantom noise sigma must be >= 0");
  for (std::size_t a = 0; a < 3; ++a)
    require(spec.core[a] > 0 && spec.core[a] < spec.middle[a] && spec.middle[a] < spec.outer[a],
            ErrorCode::invalid_argument, "phantom radii must be strictly nested (core < middle < outer)");

  const std::int64_t n = spec.size;
  const Shape shape{n, n, n};
  std::array<double, 3> c = spec.center;
  for (auto& x : c)
    if (x < 0) x = (static_cast<double>(n) - 1.0) / 2.0;

  auto inside = [&](const std::array<double, 3>& r, std::int64_t i, std::int64_t j, std::int64_t k) {
    const double u = (static_cast<double>(i) - c[0]) / r[0];
    const double v = (static_cast<double>(j) - c[1]) / r[1];
    const double w = (static_cast<double>(k) - c[2]) / r[2];
    return u * u + v * v + w * w <= 1.0;
  };

  StudyCase out;
  out.id = spec.id;
  out.mask = LabelGrid(shape);
  std::vector<std::uint8_t> cls(out.mask.size(), 0);
  std::size_t idx = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t k = 0; k < n; ++k, ++idx) {
        std::uint8_t label = 0, klass = 0;
        if (inside(spec.core, i, j, k)) label = 4, klass = 3;
        else if (inside(spec.middle, i, j, k)) label = 1, klass = 1;
        else if (inside(spec.outer, i, j, k)) label = 2, klass = 2;
        out.mask[idx] = label;
        cls[idx] = klass;
      }

  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::array<VoxelGrid*, 4> mods{&out.flair, &out.t1, &out.t1ce, &out.t2};
  for (std::size_t m = 0; m < 4; ++m) {
    VoxelGrid g(shape);
    const auto& map = spec.modalities[m];
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = static_cast<float>(map.offset + map.gain[cls[i]] + spec.noise_sigma * noise(rng));
    *mods[m] = std::move(g);
  }
  return out;
}

// ---- dataset layout -------------------------------------------------------

namespace {

std::filesystem::path case_file(const std::filesystem::path& root, const std::string& id, const std::string& what) {
  return root / id / (id + "_" + what + ".nii");
}

}  // namespace

std::vector<std::string> discover_cases(const std::filesystem::path& root) {
  std::error_code ec;
  require(std::filesystem::is_directory(root, ec), ErrorCode::io, "dataset root " + root.string() + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    bool complete = std::filesystem::exists(case_file(root, id, "seg"));
    for (const char* m : kModalityNames) complete = complete && std::filesystem::exists(case_file(root, id, m));
    if (complete) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

StudyCase read_case(const std::filesystem::path& root, const std::string& id) {
  StudyCase c;
  c.id = id;
  std::array<VoxelGrid*, 4> mods{&c.flair, &c.t1, &c.t1ce, &c.t2};
  for (std::size_t m = 0; m < 4; ++m) {
    *mods[m] = read_nifti_file(case_file(root, id, kModalityNames[m])).voxels;
    require(mods[m]->rank() == 3, ErrorCode::format,
            "case " + id + ": " + kModalityNames[m] + " is not a 3D volume");
    require(mods[m]->shape() == c.flair.shape(), ErrorCode::shape,
            "case " + id + ": modality shapes differ");
  }
  const VoxelGrid seg = read_nifti_file(case_file(root, id, "seg")).voxels;
  require(seg.shape() == c.flair.shape(), ErrorCode::shape, "case " + id + ": mask shape differs from the modalities");
  c.mask = LabelGrid(seg.shape());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const float v = seg[i];
    if (!(v == 0.0f || v == 1.0f || v == 2.0f || v == 4.0f))
      fail(ErrorCode::format, "case " + id + ": mask label " + std::to_string(v) + " outside {0,1,2,4}");
    c.mask[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

void write_case(const std::filesystem::path& root, const StudyCase& c) {
  const std::array<const VoxelGrid*, 4> mods{&c.flair, &c.t1, &c.t1ce, &c.t2};
  for (std::size_t m = 0; m < 4; ++m) write_nifti_file(case_file(root, c.id, kModalityNames[m]), *mods[m]);
  VoxelGrid seg(c.mask.shape);
  for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = c.mask[i];
  write_nifti_file(case_file(root, c.id, "seg"), seg, NiftiWriteOptions{NiftiType::uint8});
}

}  // namespace gseg
