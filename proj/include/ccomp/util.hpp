#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ccomp/common.hpp"

namespace ccomp {

uint32_t crc32_ieee(const uint8_t* data, size_t len);
std::array<uint8_t, 32> sha256(const uint8_t* data, size_t len);
std::string hex(const uint8_t* data, size_t len);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, size_t len);

// Little-endian byte sink/source used by the checkpoint and bitstream formats.
class ByteWriter {
 public:
  std::vector<uint8_t> bytes;

  void raw(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u8(uint8_t x) { bytes.push_back(x); }
  void u16(uint16_t x) { le(x); }
  void u32(uint32_t x) { le(x); }
  void u64(uint64_t x) { le(x); }
  void f32(float x) {
    uint32_t b;
    std::memcpy(&b, &x, 4);
    u32(b);
  }
  void f64(double x) {
    uint64_t b;
    std::memcpy(&b, &x, 8);
    u64(b);
  }
  void str(const std::string& s) { raw(s.data(), s.size()); }

 private:
  template <typename T>
  void le(T x) {
    for (size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<uint8_t>(x >> (8 * i)));
  }
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : p_(data), n_(len) {}
  explicit ByteReader(const std::vector<uint8_t>& b) : p_(b.data()), n_(b.size()) {}

  size_t offset() const { return off_; }
  size_t remaining() const { return n_ - off_; }

  void raw(void* out, size_t n) {
    if (off_ + n > n_)
      throw ParseError("unexpected end of data at byte " + std::to_string(off_));
    std::memcpy(out, p_ + off_, n);
    off_ += n;
  }
  uint8_t u8() {
    uint8_t x;
    raw(&x, 1);
    return x;
  }
  uint16_t u16() { return le<uint16_t>(); }
  uint32_t u32() { return le<uint32_t>(); }
  uint64_t u64() { return le<uint64_t>(); }
  float f32() {
    uint32_t b = u32();
    float x;
    std::memcpy(&x, &b, 4);
    return x;
  }
  double f64() {
    uint64_t b = u64();
    double x;
    std::memcpy(&x, &b, 8);
    return x;
  }
  std::string str(size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

 private:
  template <typename T>
  T le() {
    T x = 0;
    if (off_ + sizeof(T) > n_)
      throw ParseError("unexpected end of data at byte " + std::to_string(off_));
    for (size_t i = 0; i < sizeof(T); ++i) x |= static_cast<T>(p_[off_ + i]) << (8 * i);
    off_ += sizeof(T);
    return x;
  }
  const uint8_t* p_;
  size_t n_;
  size_t off_ = 0;
};

}  // namespace ccomp
