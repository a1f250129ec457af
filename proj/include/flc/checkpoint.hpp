#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "FLCK"                      4 bytes magic
//   u16 version                 = 1
//   u8  precision               = sizeof(scalar): 4 (single) or 8 (double)
//   u32 length + UTF-8 bytes    architecture descriptor (Model::descriptor())
//   records until end of file:
//     u32 length + name bytes
//     u8  rank
//     u32 extent x rank
//     scalar payload, little-endian IEEE-754
//
// Records cover every trainable parameter followed by the BatchNorm running
// statistics, in Model::parameters() / Model::buffers() order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "flc/errors.hpp"
#include "flc/nn.hpp"

namespace flc {

inline constexpr char kCheckpointMagic[4] = {'F', 'L', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put_uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void put_bytes(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void put_string(const std::string& s) {
    put_uint(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  template <class T>
  void put_scalar(T v) {
    if constexpr (std::is_same_v<T, float>) {
      put_uint(std::bit_cast<std::uint32_t>(v));
    } else {
      put_uint(std::bit_cast<std::uint64_t>(v));
    }
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : bytes_(b) {}

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }
  template <class U>
  U get_uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get_uint<std::uint32_t>(what);
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T get_scalar(const char* what) {
    if constexpr (std::is_same_v<T, float>) {
      return std::bit_cast<float>(get_uint<std::uint32_t>(what));
    } else {
      return std::bit_cast<double>(get_uint<std::uint64_t>(what));
    }
  }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::vector<char> serialize_checkpoint(Model<T>& model) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put_uint(kCheckpointVersion);
  w.put_uint(static_cast<std::uint8_t>(sizeof(T)));
  w.put_string(model.descriptor());
  const auto put_record = [&](const std::string& name, const Tensor<T>& t) {
    w.put_string(name);
    w.put_uint(static_cast<std::uint8_t>(4));
    for (std::size_t e : t.shape()) w.put_uint(static_cast<std::uint32_t>(e));
    for (T v : t.data()) w.put_scalar(v);
  };
  for (auto& p : model.parameters()) put_record(p.name, *p.value);
  for (auto& b : model.buffers()) put_record(b.name, *b.value);
  return std::move(w.bytes());
}

template <class T>
Model<T> deserialize_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  r.get_uint<std::uint32_t>("magic");
  const std::size_t version_at = r.offset();
  if (r.get_uint<std::uint16_t>("version") != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version", version_at);
  }
  const std::size_t precision_at = r.offset();
  const auto precision = r.get_uint<std::uint8_t>("precision");
  if (precision != 4 && precision != 8) throw FormatError("unknown precision tag", precision_at);
  if (precision != sizeof(T)) {
    throw FormatError(std::string("checkpoint stores ") + (precision == 4 ? "single" : "double") +
                          " precision, requested " + (sizeof(T) == 4 ? "single" : "double"),
                      precision_at);
  }
  const std::size_t desc_at = r.offset();
  const std::string desc = r.get_string("architecture descriptor");
  Model<T> model;
  try {
    model = Model<T>::from_descriptor(desc);
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid architecture descriptor: ") + e.what(), desc_at);
  }

  std::map<std::string, Tensor<T>*> slots;
  for (auto& p : model.parameters()) slots[p.name] = p.value;
  for (auto& b : model.buffers()) slots[b.name] = b.value;
  std::map<std::string, bool> filled;

  while (!r.at_end()) {
    const std::size_t rec_at = r.offset();
    const std::string name = r.get_string("record name");
    const auto rank = r.get_uint<std::uint8_t>("record rank");
    if (rank != 4) throw FormatError("record '" + name + "' has rank " + std::to_string(rank) + ", expected 4", rec_at);
    Shape shape{};
    for (auto& e : shape) e = r.get_uint<std::uint32_t>("record extents");
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("unexpected record '" + name + "'", rec_at);
    if (it->second->shape() != shape) {
      throw FormatError("record '" + name + "' has shape " + to_string(shape) + ", architecture expects " +
                            to_string(it->second->shape()),
                        rec_at);
    }
    if (filled[name]) throw FormatError("duplicate record '" + name + "'", rec_at);
    r.need(element_count(shape) * sizeof(T), "record payload");
    for (auto& v : it->second->data()) v = r.get_scalar<T>("record payload");
    filled[name] = true;
  }
  for (const auto& [name, _] : slots) {
    if (!filled[name]) throw FormatError("missing record '" + name + "'", r.offset());
  }
  model.eval();
  return model;
}

template <class T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file_bytes(path));
}

/// Precision tag of a checkpoint file (4 or 8), without building the model.
inline std::uint8_t checkpoint_precision(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic", 0);
  }
  return static_cast<std::uint8_t>(bytes[6]);
}

}  // namespace flc
