#include "cplab/serialize.hpp"

#include <cstdio>

namespace cplab::io {

std::string checksum_hex(uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return std::string(buf);
}

uint64_t parse_checksum_hex(const std::string& s) {
  require(s.size() == 16, ErrorKind::format,
          "checksum field must be 16 hex digits, got '" + s + "'");
  uint64_t h = 0;
  for (char c : s) {
    h <<= 4;
    if (c >= '0' && c <= '9')
      h |= uint64_t(c - '0');
    else if (c >= 'a' && c <= 'f')
      h |= uint64_t(c - 'a' + 10);
    else
      fail(ErrorKind::format, "checksum field must be 16 hex digits, got '" + s + "'");
  }
  return h;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open for writing: " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  require(out.good(), ErrorKind::io, "write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(in.good(), ErrorKind::io, "cannot open for reading: " + path.string());
  std::streamsize n = in.tellg();
  in.seekg(0);
  std::string bytes(size_t(n), '\0');
  in.read(bytes.data(), n);
  require(in.good(), ErrorKind::io, "read failed: " + path.string());
  return bytes;
}

}  // namespace cplab::io
