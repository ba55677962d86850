#pragma once

// Everything between raw study volumes and training batches.
//
// Raw label convention {0, 1, 2, 4} is remapped to contiguous class indices
// {0, 1, 2, 3} for training and mapped back on export.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gseg/autodiff.hpp"
#include "gseg/labels.hpp"

namespace gseg {

using VoxelGrid = Tensor<float>;  // spatial axes only

struct StudyCase {
  std::string id;
  VoxelGrid flair;
  VoxelGrid t1;
  VoxelGrid t1ce;
  VoxelGrid t2;
  LabelGrid mask;  // raw labels {0, 1, 2, 4}
};

// x: [spatial..., 4] in [0, 1], channels (FLAIR, T1, T1CE, T2)
// y: one-hot [spatial..., 4] over remapped classes
struct Sample {
  std::string id;
  Tensor<float> x;
  Tensor<float> y;
};

// ---- preprocessing --------------------------------------------------------

VoxelGrid min_max_normalize(const VoxelGrid& v);

std::vector<std::int64_t> center_crop_offsets(const Shape& source, const Shape& target);
VoxelGrid center_crop(const VoxelGrid& v, const Shape& target);
LabelGrid center_crop(const LabelGrid& m, const Shape& target);

LabelGrid remap_labels(const LabelGrid& raw);
LabelGrid inverse_remap_labels(const LabelGrid& classes);

Tensor<float> one_hot(const LabelGrid& mask, int n_classes = 4);
// Ties break to the lowest class index.
template <typename T>
LabelGrid argmax_decode(const Tensor<T>& probs);

Tensor<float> stack_modalities(const StudyCase& c);

// normalize -> crop -> remap -> one_hot -> stack
Sample preprocess(const StudyCase& c, const Shape& target);

// ---- class weights --------------------------------------------------------

inline constexpr double kAbsentClassFrequency = 1e-7;

std::array<std::int64_t, 4> class_counts(std::span<const LabelGrid> class_masks);
// Normalised inverse frequency, sum 1; absent classes use frequency 1e-7.
std::array<double, 4> class_weights_from_counts(const std::array<std::int64_t, 4>& counts);
// Masks hold remapped class indices {0..3}.
std::array<double, 4> compute_class_weights(std::span<const LabelGrid> class_masks);

// ---- augmentation ---------------------------------------------------------

struct Transform {
  enum class Kind { rot90, flip, transpose, shift };
  Kind kind = Kind::flip;
  int k = 1;                                  // rot90: quarter turns
  std::array<int, 2> plane{0, 1};             // rot90: spatial axes
  int axis = 0;                               // flip
  std::vector<std::size_t> permutation;       // transpose: spatial permutation
  std::vector<std::int64_t> offsets;          // shift: crop origin, wrapped
};

// Applies the same spatial transform to x and y. "shift" is a crop at the
// given origin padded with the wrapped-around remainder (a cyclic roll), so
// every transform is a bijection of the voxel grid.
Sample augment(const Sample& s, const Transform& t);
Transform random_transform(std::size_t spatial_rank, const Shape& spatial, Rng& rng);

// Appends round(ratio * N) augmented copies; originals are untouched.
std::vector<Sample> expand_with_augmentation(std::span<const Sample> samples, double ratio, Rng& rng);

// ---- 2D slicing -----------------------------------------------------------

// One 2D sample per index of the third spatial axis, in order.
std::vector<Sample> slices_2d(const Sample& volume);
Sample restack_slices(std::span<const Sample> slices);

// ---- batching and folds ---------------------------------------------------

// Index batches of consecutive groups; the final partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

// Seeded permutation split into k test folds whose sizes differ by at most
// one (the first n mod k folds are larger).
FoldPlan k_fold(std::size_t n, std::size_t k, std::uint64_t seed);

// ---- phantoms -------------------------------------------------------------

// Affine map of the one-hot class field: offset + gain[class].
struct ModalityMap {
  float offset = 0.0f;
  std::array<float, 4> gain{};  // indexed by remapped class
};

struct PhantomSpec {
  std::int64_t size = 32;
  std::array<double, 3> center{};  // voxel coordinates; negative = grid centre
  std::array<double, 3> outer{};   // label 2
  std::array<double, 3> middle{};  // label 1
  std::array<double, 3> core{};    // label 4
  std::array<ModalityMap, 4> modalities{};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::string id = "phantom";
};

// Default geometry for a grid, with radii proportional to the size.
PhantomSpec default_phantom_spec(std::int64_t size, std::uint64_t seed);
// Per-case spec of a phantom dataset: jittered centre and radii.
PhantomSpec dataset_phantom_spec(std::int64_t size, std::uint64_t seed, std::size_t index);
StudyCase generate_phantom(const PhantomSpec& spec);

// ---- dataset layout -------------------------------------------------------
// <root>/<id>/<id>_{flair,t1,t1ce,t2,seg}.nii

std::vector<std::string> discover_cases(const std::filesystem::path& root);
StudyCase read_case(const std::filesystem::path& root, const std::string& id);
void write_case(const std::filesystem::path& root, const StudyCase& c);

}  // namespace gseg
