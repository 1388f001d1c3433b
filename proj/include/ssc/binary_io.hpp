#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ssc/errors.hpp"

namespace ssc::io {

// All binary containers are little-endian regardless of host order.
inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<unsigned char, 2> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b.data()), 2);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
      static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  return true;
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!get_u32(is, v)) throw IoError("truncated " + what);
  return v;
}

inline std::uint16_t read_u16(std::istream& is, const std::string& what) {
  std::array<unsigned char, 2> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 2)) throw IoError("truncated " + what);
  return static_cast<std::uint16_t>(b[0] | b[1] << 8);
}

inline float read_f32(std::istream& is, const std::string& what) {
  const std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw IoError(path + ": bad magic, expected " + std::string(magic, 4));
  }
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  return is;
}

// Writes through a sibling temp file and renames, so readers never observe a
// partially written file.
template <typename Fn>
void write_atomic(const std::filesystem::path& p, Fn&& body) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    body(os);
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

// 64-bit FNV-1a, used for corpus fingerprints in run manifests.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open " + p.string());
    std::vector<char> buf(1 << 16);
    while (is.read(buf.data(), static_cast<std::streamsize>(buf.size())) || is.gcount() > 0)
      update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace ssc::io
