// Manifest plumbing shared by the on-disk formats: JSON parsing and field
// access that throw format errors naming the offending key, and blob loading
// that verifies the recorded checksum.
#pragma once

#include <filesystem>
#include <string>

#include "cplab/error.hpp"
#include "cplab/serialize.hpp"
#include "json.hpp"

namespace cplab::io {

inline nlohmann::json parse_json(const std::string& text,
                                 const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format,
         what + " is not valid JSON: " + std::string(e.what()));
  }
}

template <class T>
T get_field(const nlohmann::json& j, const std::string& key) {
  require(j.contains(key), ErrorKind::format,
          "manifest: missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::format, "manifest: field '" + key + "' has wrong type");
  }
}

inline nlohmann::json blob_entry(const std::string& bytes, uint64_t count) {
  return nlohmann::json{{"checksum", checksum_hex(fnv1a64_bytes(bytes))},
                        {"count", count}};
}

// Reads dir/name and checks it against the checksum recorded under
// blobs[name]; `what` names the owning format in error messages.
inline std::string load_checked_blob(const std::filesystem::path& dir,
                                     const nlohmann::json& blobs,
                                     const std::string& name,
                                     const std::string& what) {
  const nlohmann::json entry = get_field<nlohmann::json>(blobs, name);
  std::string bytes = read_file(dir / name);
  uint64_t want = parse_checksum_hex(get_field<std::string>(entry, "checksum"));
  uint64_t got = fnv1a64_bytes(bytes);
  require(got == want, ErrorKind::integrity,
          what + " blob '" + name + "' checksum mismatch (manifest " +
              checksum_hex(want) + ", file " + checksum_hex(got) + ")");
  return bytes;
}

}  // namespace cplab::io
