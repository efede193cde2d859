#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "glcf/errors.hpp"

namespace glcf::json_util {

// Rejects any key of `j` not listed in `known`.
inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
  }
}

// Reads `key` into `out` when present; type errors become ConfigError.
template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace glcf::json_util
