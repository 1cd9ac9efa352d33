#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dmlganr/errors.hpp"

namespace dmlganr::io {

// Little-endian primitives shared by the DMLF, DMLI and DMLC formats.

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void put_string16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xFFFF) throw FormatError("string longer than 65535 bytes: " + s.substr(0, 32));
  put<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || std::string_view(got.data(), 4) != magic) {
    throw FormatError("bad magic: expected " + std::string(magic));
  }
}

inline std::string get_string16(std::istream& is, const char* what) {
  const auto len = get<std::uint16_t>(is, what);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw FormatError(std::string("truncated ") + what);
  return s;
}

}  // namespace dmlganr::io
