#pragma once

// Binary checkpoint: versioned header, then tables of (path, shape,
// little-endian float32 values) for parameters and both AdamW moments.
//
//   "PMA2ECKP" | u32 version | u64 fingerprint | u64 epoch | u64 step
//   | str config | str rng | table params | table first | table second
//   str   = u32 length + bytes
//   table = u32 count + count * (str name | u32 rank | u64 dims... | f32 data...)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nn.hpp"

namespace pma2e {

inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'A', '2', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t fingerprint = 0;
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // optimizer steps taken
  std::string rng_state;
  std::vector<TensorRecord> params;
  std::vector<TensorRecord> first_moments;
  std::vector<TensorRecord> second_moments;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// FNV-1a, 64 bit.
inline std::uint64_t fingerprint_of(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void capture_parameters(const ParameterSet<T>& ps, Checkpoint& ck) {
  ck.params.clear();
  ck.first_moments.clear();
  ck.second_moments.clear();
  for (const auto& p : ps.items()) {
    auto to_f32 = [](std::span<const T> v) { return std::vector<float>(v.begin(), v.end()); };
    ck.params.push_back({p.name, p.tensor.shape(), to_f32(p.tensor.data())});
    ck.first_moments.push_back({p.name, p.tensor.shape(), to_f32(p.first_moment)});
    ck.second_moments.push_back({p.name, p.tensor.shape(), to_f32(p.second_moment)});
  }
}

/// Loads parameter values (and moments when present) by name; every model
/// parameter must be present with a matching shape.
template <typename T>
void restore_parameters(ParameterSet<T>& ps, const Checkpoint& ck) {
  auto find = [](const std::vector<TensorRecord>& table, const std::string& name) -> const TensorRecord* {
    for (const auto& r : table)
      if (r.name == name) return &r;
    return nullptr;
  };
  require(ck.params.size() == ps.items().size(), ErrorKind::Format,
          "checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model expects " +
              std::to_string(ps.items().size()));
  for (auto& p : ps.items()) {
    const auto* r = find(ck.params, p.name);
    require(r != nullptr, ErrorKind::Format, "checkpoint lacks parameter " + p.name);
    require(r->shape == p.tensor.shape(), ErrorKind::Format,
            "parameter " + p.name + " shape " + shape_str(r->shape) + " != model " + shape_str(p.tensor.shape()));
    std::copy(r->data.begin(), r->data.end(), p.tensor.values().begin());
    if (const auto* m = find(ck.first_moments, p.name)) std::copy(m->data.begin(), m->data.end(), p.first_moment.begin());
    if (const auto* v = find(ck.second_moments, p.name)) std::copy(v->data.begin(), v->data.end(), p.second_moment.begin());
  }
}

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : bytes_(b) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::Format, "checkpoint is truncated");
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

inline void write_table(ByteWriter& w, const std::vector<TensorRecord>& t) {
  w.put(static_cast<std::uint32_t>(t.size()));
  for (const auto& r : t) {
    w.put_str(r.name);
    w.put(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.put(static_cast<std::uint64_t>(d));
    for (float f : r.data) w.put_f32(f);
  }
}

inline std::vector<TensorRecord> read_table(ByteReader& r) {
  const auto count = r.get<std::uint32_t>();
  std::vector<TensorRecord> t;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.get_str();
    const auto rank = r.get<std::uint32_t>();
    require(rank <= 8, ErrorKind::Format, "checkpoint record " + rec.name + " has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const auto n = shape_numel(rec.shape);
    r.need(4 * n);
    rec.data.resize(n);
    for (auto& f : rec.data) f = r.get_f32();
    t.push_back(std::move(rec));
  }
  return t;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(ck.fingerprint);
  w.put(ck.epoch);
  w.put(ck.step);
  w.put_str(ck.config_text);
  w.put_str(ck.rng_state);
  detail::write_table(w, ck.params);
  detail::write_table(w, ck.first_moments);
  detail::write_table(w, ck.second_moments);
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorKind::Version,
          "not a checkpoint: bad header magic");
  detail::ByteReader r(bytes);
  for (int i = 0; i < 8; ++i) r.get<std::uint8_t>();
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Version,
          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
              std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.fingerprint = r.get<std::uint64_t>();
  ck.epoch = r.get<std::uint64_t>();
  ck.step = r.get<std::uint64_t>();
  ck.config_text = r.get_str();
  ck.rng_state = r.get_str();
  ck.params = detail::read_table(r);
  ck.first_moments = detail::read_table(r);
  ck.second_moments = detail::read_table(r);
  require(r.done(), ErrorKind::Format, "checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pma2e
