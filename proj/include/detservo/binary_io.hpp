#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace detservo::binary {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, const T& v) {
  static_assert(std::is_arithmetic_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_array(std::ostream& out, const T* data, std::size_t n) {
  static_assert(std::is_arithmetic_v<T>);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  static_assert(std::is_arithmetic_v<T>);
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("unexpected end of file");
  return v;
}

template <typename T>
void get_array(std::istream& in, T* data, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)))) {
    throw std::runtime_error("unexpected end of file");
  }
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1u << 24) {
  const auto n = get<std::uint32_t>(in);
  if (n > max_len) throw std::runtime_error("string length exceeds limit");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw std::runtime_error("unexpected end of file");
  return s;
}

}  // namespace detservo::binary
