#pragma once

// Little-endian encode/decode helpers shared by the dataset and checkpoint
// formats. Values are packed byte by byte so the encoding is independent of
// host byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "bbn/errors.hpp"

namespace bbn::io {

class ByteWriter {
 public:
  void magic(std::string_view m) { buf_.append(m); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (bytes_.substr(pos_, m.size()) != m) {
      throw ParseError("bad magic, expected \"" + std::string(m) + "\"", pos_);
    }
    pos_ += m.size();
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  // Fails unless `count` items of `width` bytes remain; guards against
  // allocating for a header that promises more than the file holds.
  void need_items(std::uint64_t count, std::uint64_t width, const char* what) const {
    const std::uint64_t remaining = bytes_.size() - pos_;
    if (width != 0 && count > remaining / width) {
      throw ParseError(std::string("truncated payload: ") + what, bytes_.size());
    }
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw ParseError("trailing bytes after payload", pos_);
  }

  std::size_t offset() const noexcept { return pos_; }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated while reading ") + what, pos_);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace bbn::io
