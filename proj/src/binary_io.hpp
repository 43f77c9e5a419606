#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cadr/errors.hpp"

namespace cadr::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw FormatError(what + ": unexpected end of file");
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void check_magic(std::istream& in, const char (&magic)[9], const std::string& path) {
  char buf[8];
  if (!in.read(buf, 8)) throw FormatError(path + ": file too short for header");
  if (std::memcmp(buf, magic, 8) != 0) {
    throw FormatError(path + ": bad magic, expected " + std::string(magic, 8));
  }
}

}  // namespace cadr::detail
