#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace inmemo::bin {

static_assert(std::endian::native == std::endian::little,
              "checkpoint formats are little-endian; add byte swapping for this target");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw std::runtime_error("truncated binary file");
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1u << 20) {
  const auto n = get<std::uint32_t>(in);
  if (n > max_len) throw std::runtime_error("corrupt binary file: string length out of range");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw std::runtime_error("truncated binary file");
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error(std::string("bad magic: expected ") + magic);
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

}  // namespace inmemo::bin
