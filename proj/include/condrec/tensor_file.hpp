#pragma once

// Named-tensor container used for index files and kernel weights.
//
//   magic[8] | u32 version | u32 section_count |
//   section table: { str name | u8 dtype | u8 rank | u64 dims[rank] |
//                    u64 offset | u64 byte_length } * section_count |
//   payload | u64 fnv1a
//
// Offsets are relative to the start of the payload. Section byte lengths
// must equal the product of dims times the dtype width (dtype `bytes` is
// exempt and carries opaque data such as length-prefixed strings).

#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condrec/binary_io.hpp"
#include "condrec/error.hpp"

namespace condrec::tensors {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u32 = 2, u8 = 3, bytes = 4 };

constexpr std::size_t dtype_width(DType t) noexcept {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u32: return 4;
    case DType::u8: return 1;
    case DType::bytes: return 1;
  }
  return 0;
}

struct Section {
  DType dtype = DType::u8;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> data;

  std::uint64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                           [](std::uint64_t a, std::uint64_t b) { return a * b; });
  }
};

class TensorFile {
 public:
  inline static constexpr std::uint32_t kVersion = 1;

  explicit TensorFile(std::string magic) : magic_(std::move(magic)) {
    if (magic_.size() != 8) throw InvariantError("tensor file magic must be 8 bytes");
  }

  const std::string& magic() const noexcept { return magic_; }

  template <class T>
  void put(const std::string& name, DType dtype, std::vector<std::uint64_t> shape,
           std::span<const T> values) {
    Section s;
    s.dtype = dtype;
    s.shape = std::move(shape);
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    s.data.assign(p, p + values.size_bytes());
    if (dtype != DType::bytes && s.data.size() != s.element_count() * dtype_width(dtype)) {
      throw InvariantError("section '" + name + "' data does not match its shape");
    }
    sections_[name] = std::move(s);
  }

  void put_f32(const std::string& name, std::vector<std::uint64_t> shape, std::span<const float> v) {
    put(name, DType::f32, std::move(shape), v);
  }
  void put_f64(const std::string& name, std::vector<std::uint64_t> shape, std::span<const double> v) {
    put(name, DType::f64, std::move(shape), v);
  }
  void put_u32(const std::string& name, std::vector<std::uint64_t> shape,
               std::span<const std::uint32_t> v) {
    put(name, DType::u32, std::move(shape), v);
  }
  void put_u8(const std::string& name, std::vector<std::uint64_t> shape,
              std::span<const std::uint8_t> v) {
    put(name, DType::u8, std::move(shape), v);
  }

  /// Strings stored as u32-length-prefixed UTF-8 in a `bytes` section;
  /// shape records the string count.
  void put_strings(const std::string& name, std::span<const std::string> strings) {
    io::ByteWriter w;
    for (const auto& s : strings) w.str(s);
    auto buf = w.take();
    put(name, DType::bytes, {strings.size()}, std::span<const std::uint8_t>(buf));
  }

  bool has(const std::string& name) const { return sections_.count(name) != 0; }

  const Section& get(const std::string& name) const {
    auto it = sections_.find(name);
    if (it == sections_.end()) throw FormatError("missing section '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Section>& sections() const noexcept { return sections_; }

  template <class T>
  std::vector<T> values(const std::string& name, DType expected) const {
    const auto& s = get(name);
    if (s.dtype != expected) throw FormatError("section '" + name + "' has an unexpected dtype");
    std::vector<T> out(s.data.size() / sizeof(T));
    if (!s.data.empty()) std::memcpy(out.data(), s.data.data(), s.data.size());
    return out;
  }

  std::vector<float> f32(const std::string& name) const { return values<float>(name, DType::f32); }
  std::vector<double> f64(const std::string& name) const { return values<double>(name, DType::f64); }
  std::vector<std::uint32_t> u32(const std::string& name) const {
    return values<std::uint32_t>(name, DType::u32);
  }
  std::vector<std::uint8_t> u8(const std::string& name) const {
    return values<std::uint8_t>(name, DType::u8);
  }

  std::vector<std::string> strings(const std::string& name) const {
    const auto& s = get(name);
    if (s.dtype != DType::bytes || s.shape.size() != 1) {
      throw FormatError("section '" + name + "' is not a string table");
    }
    io::ByteReader r(s.data, "section '" + name + "'");
    std::vector<std::string> out;
    out.reserve(s.shape[0]);
    for (std::uint64_t i = 0; i < s.shape[0]; ++i) out.push_back(r.str());
    if (r.remaining() != 0) throw FormatError("section '" + name + "' has trailing bytes");
    return out;
  }

  std::vector<std::uint8_t> encode() const {
    io::ByteWriter w;
    w.raw(magic_);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(sections_.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, s] : sections_) {
      w.str(name);
      w.u8(static_cast<std::uint8_t>(s.dtype));
      w.u8(static_cast<std::uint8_t>(s.shape.size()));
      for (auto d : s.shape) w.u64(d);
      w.u64(offset);
      w.u64(s.data.size());
      offset += s.data.size();
    }
    for (const auto& [name, s] : sections_) w.bytes(s.data);
    w.seal();
    return w.take();
  }

  void save(const std::filesystem::path& path) const { io::write_file_atomic(path, encode()); }

  static TensorFile decode(std::span<const std::uint8_t> data, std::string_view magic,
                           const std::string& what) {
    io::ByteReader r(data, what);
    auto m = r.take(std::min<std::size_t>(8, data.size()));
    if (std::string_view(reinterpret_cast<const char*>(m.data()), m.size()) != magic) {
      throw FormatError(what + ": bad magic (expected " + std::string(magic) + ")");
    }
    if (const auto version = r.u32(); version != kVersion) {
      throw FormatError(what + ": unsupported format version " + std::to_string(version));
    }
    auto body = io::verify_sealed(data, what);
    io::ByteReader br(body, what);
    br.take(12);
    const std::uint32_t count = br.u32();
    struct Entry {
      std::string name;
      DType dtype;
      std::vector<std::uint64_t> shape;
      std::uint64_t offset;
      std::uint64_t length;
    };
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      e.name = br.str();
      const auto raw_dtype = br.u8();
      if (raw_dtype > static_cast<std::uint8_t>(DType::bytes)) {
        throw FormatError(what + ": corrupted section table (dtype of '" + e.name + "')");
      }
      e.dtype = static_cast<DType>(raw_dtype);
      const auto rank = br.u8();
      for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(br.u64());
      e.offset = br.u64();
      e.length = br.u64();
      entries.push_back(std::move(e));
    }
    const std::size_t payload_start = br.position();
    const std::uint64_t payload_size = body.size() - payload_start;
    TensorFile file{std::string(magic)};
    for (auto& e : entries) {
      if (e.offset > payload_size || e.length > payload_size - e.offset) {
        throw FormatError(what + ": corrupted section table (section '" + e.name +
                          "' lies outside the payload)");
      }
      Section s;
      s.dtype = e.dtype;
      s.shape = std::move(e.shape);
      if (e.dtype != DType::bytes && e.length != s.element_count() * dtype_width(e.dtype)) {
        throw FormatError(what + ": corrupted section table (section '" + e.name +
                          "' length does not match its shape)");
      }
      auto first = body.begin() + static_cast<std::ptrdiff_t>(payload_start + e.offset);
      s.data.assign(first, first + static_cast<std::ptrdiff_t>(e.length));
      file.sections_[e.name] = std::move(s);
    }
    return file;
  }

  static TensorFile load(const std::filesystem::path& path, std::string_view magic) {
    return decode(io::read_file(path), magic, path.string());
  }

 private:
  std::string magic_;
  std::map<std::string, Section> sections_;
};

}  // namespace condrec::tensors
