#pragma once

// Little-endian primitive readers/writers shared by the channel batch and
// checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "beamsim/errors.hpp"

namespace beamsim::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
  write_u64(os, bits);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void require(std::istream& is, const char* what) {
  if (!is) {
    throw FramingError(std::string("truncated input while reading ") + what);
  }
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u32");
  return to_little(v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u64");
  return to_little(v);
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline std::string read_string(std::istream& is, std::uint64_t max_len = 1u << 24) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) {
    throw FramingError("string length " + std::to_string(n) + " exceeds limit");
  }
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  require(is, "string");
  return s;
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  is.read(buf, 4);
  require(is, "magic");
  if (std::memcmp(buf, magic, 4) != 0) {
    throw FramingError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace beamsim::io
