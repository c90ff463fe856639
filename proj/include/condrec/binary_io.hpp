#pragma once

// Little-endian byte encoding helpers and whole-file I/O.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "condrec/error.hpp"
#include "condrec/hash.hpp"

namespace condrec::io {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }

  void bytes(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  void raw(std::string_view data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

  /// u32 length prefix followed by the UTF-8 bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  void f32_array(std::span<const float> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    buf_.insert(buf_.end(), p, p + values.size_bytes());
  }

  std::size_t size() const noexcept { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

  /// Appends the FNV-1a 64 checksum of everything written so far.
  void seal() { u64(fnv1a64(std::span<const std::uint8_t>(buf_))); }

 private:
  template <class T>
  void put(T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.insert(buf_.end(), b, b + sizeof(T));
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

  std::string str() {
    const std::uint32_t len = u32();
    auto span = take(len);
    return std::string(reinterpret_cast<const char*>(span.data()), span.size());
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) {
      throw FormatError(what_ + " is truncated (needed " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ", " +
                        std::to_string(remaining()) + " left)");
    }
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void f32_array(std::span<float> out) {
    auto src = take(out.size_bytes());
    std::memcpy(out.data(), src.data(), src.size());
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  void seek(std::size_t pos) { pos_ = pos; }
  const std::string& what() const noexcept { return what_; }

 private:
  template <class T>
  T get() {
    auto span = take(sizeof(T));
    T v;
    std::memcpy(&v, span.data(), sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Verifies and strips a trailing FNV-1a 64 checksum.
inline std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> data,
                                                   const std::string& what) {
  if (data.size() < sizeof(std::uint64_t)) throw FormatError(what + " is too short");
  auto body = data.first(data.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body.size(), sizeof(stored));
  if (stored != fnv1a64(body)) throw FormatError(what + " failed checksum verification");
  return body;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> data(size);
  if (size && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
    throw DataError("failed reading " + path.string());
  }
  return data;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Writes to a sibling temporary and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace condrec::io
