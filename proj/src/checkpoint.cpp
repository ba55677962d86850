#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <map>

#include "gseg/nifti.hpp"
#include "gseg/training.hpp"

// Layout (little-endian):
//   "GSEG" | u32 version | u32 n + config text | u32 count |
//   count x (u32 n + name | u8 dtype | u32 rank | rank x u64 extent | payload) | u32 crc32

namespace gseg {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'E', 'G'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    static_assert(std::is_integral_v<U> || std::is_floating_point_v<U>);
    std::array<std::byte, sizeof(U)> buf;
    std::memcpy(buf.data(), &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    bytes(buf.data(), buf.size());
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void tensor(const std::string& name, const Tensor<T>& t) {
    str(name);
    le<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
    le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) le<std::uint64_t>(static_cast<std::uint64_t>(e));
    if constexpr (std::endian::native == std::endian::little) bytes(t.raw(), t.size() * sizeof(T));
    else for (auto v : t.data()) le<T>(v);
  }
  std::vector<std::byte>& out() { return out_; }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}
  const std::byte* take(std::size_t n) {
    if (n > in_.size() - pos_) fail(ErrorCode::format, "checkpoint is truncated");
    const std::byte* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U le() {
    std::array<std::byte, sizeof(U)> buf;
    std::memcpy(buf.data(), take(sizeof(U)), sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    U v;
    std::memcpy(&v, buf.data(), sizeof(U));
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  DType dtype = DType::f32;
  Shape shape;
  std::span<const std::byte> payload;
};

template <typename T>
Tensor<T> decode(const std::string& name, const RawTensor& raw, const Shape& expect) {
  require(raw.dtype == dtype_of<T>(), ErrorCode::format, "checkpoint tensor " + name + " has the wrong dtype");
  require(raw.shape == expect, ErrorCode::format,
          "checkpoint tensor " + name + " has shape " + to_string(raw.shape) + ", expected " + to_string(expect));
  Tensor<T> t(expect);
  std::memcpy(t.raw(), raw.payload.data(), raw.payload.size());
  if constexpr (std::endian::native == std::endian::big)
    for (auto& v : t.data()) {
      auto b = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
      std::reverse(b.begin(), b.end());
      v = std::bit_cast<T>(b);
    }
  return t;
}

std::uint32_t crc_of(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t at = 0;
  while (at < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - at, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + at), n);
    at += n;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void write_state(Writer& w, const ModelState<T>& st) {
  const auto params = st.params.items();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size() * (st.adam.m.empty() ? 1 : 3)));
  for (const auto& p : params) w.tensor(p.name, p.value);
  if (st.adam.m.empty()) return;
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.m/" + params[i].name, st.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.v/" + params[i].name, st.adam.v[i]);
}

template <typename T>
void read_state(ModelState<T>& st, const std::map<std::string, RawTensor>& tensors, std::int64_t adam_step) {
  std::size_t used = 0;
  for (auto& p : st.params.items()) {
    const auto it = tensors.find(p.name);
    require(it != tensors.end(), ErrorCode::format, "checkpoint is missing tensor " + p.name);
    p.value = decode<T>(p.name, it->second, p.value.shape());
    ++used;
  }
  const bool has_adam = tensors.count("adam.m/" + std::string(st.params.items().front().name)) > 0;
  if (has_adam) {
    for (auto& p : st.params.items()) {
      for (const char* which : {"adam.m/", "adam.v/"}) {
        const std::string name = which + p.name;
        const auto it = tensors.find(name);
        require(it != tensors.end(), ErrorCode::format, "checkpoint is missing tensor " + name);
        (which[5] == 'm' ? st.adam.m : st.adam.v).push_back(decode<T>(name, it->second, p.value.shape()));
        ++used;
      }
    }
  }
  require(used == tensors.size(), ErrorCode::format, "checkpoint holds tensors this model does not use");
  st.adam.step = adam_step;
}

}  // namespace

std::vector<std::byte> serialize_checkpoint(const Model& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.str(config_to_text(model.config) + "epoch = " + std::to_string(model.epoch) + "\n" +
        "adam_step = " + std::to_string(model.adam_step()) + "\n");
  std::visit([&](const auto& st) { write_state(w, st); }, model.state);
  const std::uint32_t crc = crc_of(w.out());
  w.le<std::uint32_t>(crc);
  return std::move(w.out());
}

Model deserialize_checkpoint(std::span<const std::byte> bytes) {
  require(bytes.size() >= 12, ErrorCode::format, "checkpoint is truncated");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::format, "not a checkpoint (bad magic)");
  Reader head(bytes.subspan(4, 4));
  const auto version = head.le<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorCode::version,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kCheckpointVersion) + ")");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  require(tail.le<std::uint32_t>() == crc_of(body), ErrorCode::checksum, "checkpoint checksum mismatch");

  Reader r(body.subspan(8));
  TrainConfig config;
  int epoch = 0;
  std::int64_t adam_step = 0;
  for (const auto& [k, v] : parse_key_values(r.str())) {
    if (k == "epoch") epoch = std::stoi(v);
    else if (k == "adam_step") adam_step = std::stoll(v);
    else set_config_value(config, k, v);
  }

  std::map<std::string, RawTensor> tensors;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    RawTensor t;
    const auto code = r.le<std::uint8_t>();
    require(code == 1 || code == 2, ErrorCode::format, "checkpoint tensor " + name + ": unknown dtype");
    t.dtype = static_cast<DType>(code);
    const auto rank = r.le<std::uint32_t>();
    require(rank <= 8, ErrorCode::format, "checkpoint tensor " + name + ": implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.le<std::uint64_t>();
      require(e >= 1 && e < (1ULL << 40) && n <= (1ULL << 40) / e, ErrorCode::format,
              "checkpoint tensor " + name + ": bad extent");
      n *= e;
      t.shape.push_back(static_cast<std::int64_t>(e));
    }
    const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
    t.payload = std::span<const std::byte>(r.take(static_cast<std::size_t>(n) * width), static_cast<std::size_t>(n) * width);
    require(tensors.emplace(std::move(name), t).second, ErrorCode::format, "checkpoint has a duplicate tensor");
  }
  require(r.done(), ErrorCode::format, "checkpoint has trailing bytes");

  // Rebuild the architecture, then overwrite every freshly initialised tensor.
  Model m = make_model(config);
  m.epoch = epoch;
  std::visit([&](auto& st) { read_state(st, tensors, adam_step); }, m.state);
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  // Write-then-rename so a crash never leaves a half-written checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, serialize_checkpoint(model));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Model load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace gseg
