#include "ccomp/util.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cstdio>
#include <fstream>

namespace ccomp {

uint32_t crc32_ieee(const uint8_t* data, size_t len) {
  return static_cast<uint32_t>(::crc32(0L, data, static_cast<uInt>(len)));
}

std::array<uint8_t, 32> sha256(const uint8_t* data, size_t len) {
  std::array<uint8_t, 32> out{};
  unsigned int outlen = 0;
  EVP_Digest(data, len, out.data(), &outlen, EVP_sha256(), nullptr);
  return out;
}

std::string hex(const uint8_t* data, size_t len) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(len * 2);
  for (size_t i = 0; i < len; ++i) {
    s.push_back(digits[data[i] >> 4]);
    s.push_back(digits[data[i] & 0xf]);
  }
  return s;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  std::vector<uint8_t> buf(static_cast<size_t>(f.tellg()));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error("short read: " + path);
  return buf;
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open file for write: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!f) throw Error("short write: " + path);
}

}  // namespace ccomp
