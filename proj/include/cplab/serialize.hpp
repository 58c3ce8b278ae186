// Little-endian binary IO and the FNV-1a 64 checksum used by every on-disk
// manifest. Blobs are raw value arrays; multi-byte values are stored
// little-endian regardless of host order.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cplab/error.hpp"
#include "cplab/types.hpp"

namespace cplab::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <class T>
inline void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
inline T read_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline uint64_t fnv1a64_bytes(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64_bytes(const std::string& s) {
  return fnv1a64_bytes(s.data(), s.size());
}

std::string checksum_hex(uint64_t h);
uint64_t parse_checksum_hex(const std::string& s);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Typed blob helpers: payload is count values of T, little-endian.
template <class T>
std::string pack_values(const T* values, size_t count) {
  std::string out;
  out.reserve(count * sizeof(T));
  for (size_t i = 0; i < count; ++i) append_le(out, values[i]);
  return out;
}

template <class T>
void unpack_values(const std::string& bytes, T* values, size_t count,
                   const std::string& what) {
  require(bytes.size() == count * sizeof(T), ErrorKind::format,
          what + ": blob length mismatch (got " +
              std::to_string(bytes.size()) + " bytes, expected " +
              std::to_string(count * sizeof(T)) + ")");
  for (size_t i = 0; i < count; ++i)
    values[i] = read_le<T>(bytes.data() + i * sizeof(T));
}

}  // namespace cplab::io
