#pragma once

// Single-file NIfTI-1 (.nii) reader and writer.
//
// Voxels are exposed as a float32 tensor indexed (i, j, k, ...) in NIfTI
// axis order; on disk the first axis varies fastest.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gseg/tensor.hpp"

namespace gseg {

inline constexpr std::int32_t kNiftiHeaderSize = 348;
inline constexpr float kNiftiWriteOffset = 352.0f;

enum class NiftiType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, float64 = 64 };

int nifti_bitpix(NiftiType type);

struct NiftiHeader {
  std::int32_t sizeof_hdr = kNiftiHeaderSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = static_cast<std::int16_t>(NiftiType::float32);
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{1, 1, 1, 1, 1, 1, 1, 1};
  float vox_offset = kNiftiWriteOffset;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;
};

struct NiftiVolume {
  NiftiHeader header;
  Tensor<float> voxels;
};

struct NiftiWriteOptions {
  NiftiType datatype = NiftiType::float32;
  bool big_endian = false;
  float scl_slope = 0.0f;  // 0 = unscaled
  float scl_inter = 0.0f;
};

NiftiVolume read_nifti(std::span<const std::byte> bytes);
std::vector<std::byte> write_nifti(const Tensor<float>& voxels, const NiftiWriteOptions& options = {});
std::vector<std::byte> write_nifti(const NiftiVolume& volume, const NiftiWriteOptions& options = {});

NiftiVolume read_nifti_file(const std::filesystem::path& path);
void write_nifti_file(const std::filesystem::path& path, const Tensor<float>& voxels,
                      const NiftiWriteOptions& options = {});

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace gseg
