#include "gseg/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace gseg {

namespace {

// Byte offsets of the NIfTI-1 header fields used here.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T load(std::span<const std::byte> bytes, std::size_t offset, bool swap) {
  std::array<std::byte, sizeof(T)> buf;
  std::memcpy(buf.data(), bytes.data() + offset, sizeof(T));
  if (swap) std::reverse(buf.begin(), buf.end());
  return std::bit_cast<T>(buf);
}

template <typename T>
void store(std::vector<std::byte>& out, std::size_t offset, T value, bool swap) {
  auto buf = std::bit_cast<std::array<std::byte, sizeof(T)>>(value);
  if (swap) std::reverse(buf.begin(), buf.end());
  std::memcpy(out.data() + offset, buf.data(), sizeof(T));
}

constexpr bool host_is_big_endian() { return std::endian::native == std::endian::big; }

bool supported(std::int16_t code) {
  return code == 2 || code == 4 || code == 16 || code == 64;
}

// File order (first axis fastest) <-> tensor order (last axis fastest).
std::vector<std::size_t> reversed_axes(std::size_t rank) {
  std::vector<std::size_t> perm(rank);
  std::iota(perm.rbegin(), perm.rend(), std::size_t{0});
  return perm;
}

}  // namespace

int nifti_bitpix(NiftiType type) {
  switch (type) {
    case NiftiType::uint8: return 8;
    case NiftiType::int16: return 16;
    case NiftiType::float32: return 32;
    case NiftiType::float64: return 64;
  }
  return 0;
}

NiftiVolume read_nifti(std::span<const std::byte> bytes) {
  require(bytes.size() >= static_cast<std::size_t>(kNiftiHeaderSize), ErrorCode::format,
          "truncated NIfTI header: " + std::to_string(bytes.size()) + " bytes");
  NiftiHeader h;
  bool swap = false;
  const auto raw_size = load<std::int32_t>(bytes, kOffSizeofHdr, false);
  if (raw_size != kNiftiHeaderSize) {
    require(load<std::int32_t>(bytes, kOffSizeofHdr, true) == kNiftiHeaderSize, ErrorCode::format,
            "sizeof_hdr is neither 348 nor its byte swap");
    swap = true;
  }
  h.big_endian = swap != host_is_big_endian();

  std::memcpy(h.magic.data(), bytes.data() + kOffMagic, 4);
  const bool single = std::memcmp(h.magic.data(), "n+1\0", 4) == 0;
  const bool paired = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
  require(single || paired, ErrorCode::format, "bad NIfTI magic");

  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = load<std::int16_t>(bytes, kOffDim + 2 * i, swap);
  require(h.dim[0] >= 1 && h.dim[0] <= 7, ErrorCode::format, "dim[0] must lie in 1..7, got " + std::to_string(h.dim[0]));
  h.datatype = load<std::int16_t>(bytes, kOffDatatype, swap);
  require(supported(h.datatype), ErrorCode::format, "unsupported NIfTI datatype " + std::to_string(h.datatype));
  h.bitpix = load<std::int16_t>(bytes, kOffBitpix, swap);
  const auto type = static_cast<NiftiType>(h.datatype);
  require(h.bitpix == nifti_bitpix(type), ErrorCode::format,
          "bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " + std::to_string(h.datatype));
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = load<float>(bytes, kOffPixdim + 4 * i, swap);
  h.vox_offset = load<float>(bytes, kOffVoxOffset, swap);
  h.scl_slope = load<float>(bytes, kOffSclSlope, swap);
  h.scl_inter = load<float>(bytes, kOffSclInter, swap);
  h.qform_code = load<std::int16_t>(bytes, kOffQformCode, swap);
  h.sform_code = load<std::int16_t>(bytes, kOffSformCode, swap);
  require(std::isfinite(h.vox_offset) && h.vox_offset >= static_cast<float>(kNiftiHeaderSize), ErrorCode::format,
          "vox_offset must be >= 348");

  const auto rank = static_cast<std::size_t>(h.dim[0]);
  const std::size_t elem = static_cast<std::size_t>(h.bitpix / 8);
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  require(offset <= bytes.size(), ErrorCode::format, "vox_offset beyond end of file");
  const std::size_t capacity = (bytes.size() - offset) / elem;
  Shape file_shape;  // slowest axis first
  std::size_t count = 1;
  for (std::size_t i = rank; i >= 1; --i) {
    if (h.dim[i] < 1) fail(ErrorCode::format, "dim[" + std::to_string(i) + "] must be positive");
    count *= static_cast<std::size_t>(h.dim[i]);
    if (count > capacity) fail(ErrorCode::format, "truncated NIfTI payload");
    file_shape.push_back(h.dim[i]);
  }

  const bool scale = std::isfinite(h.scl_slope) && h.scl_slope != 0.0f;
  const double slope = h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  std::vector<float> values(count);
  const auto payload = bytes.subspan(offset);
  for (std::size_t i = 0; i < count; ++i) {
    double v = 0.0;
    switch (type) {
      case NiftiType::uint8: v = static_cast<double>(std::to_integer<std::uint8_t>(payload[i])); break;
      case NiftiType::int16: v = load<std::int16_t>(payload, 2 * i, swap); break;
      case NiftiType::float32: v = load<float>(payload, 4 * i, swap); break;
      case NiftiType::float64: v = load<double>(payload, 8 * i, swap); break;
    }
    values[i] = static_cast<float>(scale ? slope * v + inter : v);
  }

  Tensor<float> file_order(file_shape, std::move(values));
  NiftiVolume vol{h, permute_axes(file_order, reversed_axes(rank))};
  return vol;
}

std::vector<std::byte> write_nifti(const Tensor<float>& voxels, const NiftiWriteOptions& options) {
  const auto rank = voxels.rank();
  require(rank >= 1 && rank <= 7, ErrorCode::shape, "NIfTI volumes have rank 1..7");
  for (auto e : voxels.shape())
    require(e <= std::numeric_limits<std::int16_t>::max(), ErrorCode::shape, "extent too large for NIfTI-1");
  require(std::isfinite(options.scl_slope) && std::isfinite(options.scl_inter), ErrorCode::invalid_argument,
          "scaling must be finite");

  const auto type = options.datatype;
  const std::size_t elem = static_cast<std::size_t>(nifti_bitpix(type) / 8);
  const bool swap = options.big_endian != host_is_big_endian();
  const auto offset = static_cast<std::size_t>(kNiftiWriteOffset);
  std::vector<std::byte> out(offset + voxels.size() * elem, std::byte{0});

  store<std::int32_t>(out, kOffSizeofHdr, kNiftiHeaderSize, swap);
  store<std::int16_t>(out, kOffDim, static_cast<std::int16_t>(rank), swap);
  for (std::size_t i = 1; i < 8; ++i) {
    const std::int16_t d = i <= rank ? static_cast<std::int16_t>(voxels.shape()[i - 1]) : std::int16_t{1};
    store<std::int16_t>(out, kOffDim + 2 * i, d, swap);
  }
  store<std::int16_t>(out, kOffDatatype, static_cast<std::int16_t>(type), swap);
  store<std::int16_t>(out, kOffBitpix, static_cast<std::int16_t>(nifti_bitpix(type)), swap);
  for (std::size_t i = 0; i < 8; ++i) store<float>(out, kOffPixdim + 4 * i, 1.0f, swap);
  store<float>(out, kOffVoxOffset, kNiftiWriteOffset, swap);
  store<float>(out, kOffSclSlope, options.scl_slope, swap);
  store<float>(out, kOffSclInter, options.scl_inter, swap);
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  const Tensor<float> file_order = permute_axes(voxels, reversed_axes(rank));
  const bool scale = options.scl_slope != 0.0f;
  for (std::size_t i = 0; i < file_order.size(); ++i) {
    const double v = file_order[i];
    const double raw = scale ? (v - options.scl_inter) / options.scl_slope : v;
    auto integral = [&](double lo, double hi) {
      const double r = std::nearbyint(raw);
      if (!(std::isfinite(raw) && r >= lo && r <= hi))
        fail(ErrorCode::invalid_argument, "voxel value " + std::to_string(v) + " not representable in the integer datatype");
      return r;
    };
    const std::size_t at = offset + i * elem;
    switch (type) {
      case NiftiType::uint8: out[at] = static_cast<std::byte>(static_cast<std::uint8_t>(integral(0, 255))); break;
      case NiftiType::int16: store<std::int16_t>(out, at, static_cast<std::int16_t>(integral(-32768, 32767)), swap); break;
      case NiftiType::float32: store<float>(out, at, static_cast<float>(raw), swap); break;
      case NiftiType::float64: store<double>(out, at, raw, swap); break;
    }
  }
  return out;
}

std::vector<std::byte> write_nifti(const NiftiVolume& volume, const NiftiWriteOptions& options) {
  return write_nifti(volume.voxels, options);
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  require(static_cast<bool>(in), ErrorCode::io, "failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

NiftiVolume read_nifti_file(const std::filesystem::path& path) { return read_nifti(read_file_bytes(path)); }

void write_nifti_file(const std::filesystem::path& path, const Tensor<float>& voxels, const NiftiWriteOptions& options) {
  write_file_bytes(path, write_nifti(voxels, options));
}

}  // namespace gseg
