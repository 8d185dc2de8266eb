#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fiml/common.hpp"

// Little-endian byte buffers with a CRC32 trailer, shared by the dataset and
// checkpoint formats.
namespace fiml::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  // Appends the CRC32 of everything written so far.
  void seal() {
    const auto crc = crc32(0L, buf_.data(), static_cast<uInt>(buf_.size()));
    u32(static_cast<std::uint32_t>(crc));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("failed writing " + path.string());
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}

  static Reader load(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(buf), what);
  }

  void expect_magic(const char (&magic)[5]) {
    if (buf_.size() < 4 || std::memcmp(buf_.data(), magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic");
    }
    pos_ = 4;
  }

  // Verifies and strips the CRC32 trailer.
  void verify_crc() {
    if (buf_.size() < 8) throw FormatError(what_ + ": truncated payload");
    const std::size_t body = buf_.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + body, 4);
    const auto crc = static_cast<std::uint32_t>(crc32(0L, buf_.data(), static_cast<uInt>(body)));
    if (crc != stored) throw FormatError(what_ + ": checksum mismatch");
    end_ = body;
  }

  void bytes(void* p, std::size_t n) {
    if (pos_ + n > limit()) throw FormatError(what_ + ": truncated payload");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (pos_ + n > limit()) throw FormatError(what_ + ": truncated payload");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return limit() - pos_; }
  // Peeks the byte at an absolute offset (for version checks before the CRC).
  std::uint8_t byte_at(std::size_t offset) const {
    if (offset >= buf_.size()) throw FormatError(what_ + ": truncated payload");
    return buf_[offset];
  }

 private:
  std::size_t limit() const { return end_ == 0 ? buf_.size() : end_; }

  std::vector<std::uint8_t> buf_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace fiml::io
