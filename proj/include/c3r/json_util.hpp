#pragma once

#include <initializer_list>
#include <string>

#include "c3r/tensor.hpp"
#include "json.hpp"

namespace c3r {

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& section);

/// Reads `key` into `out` when present; type errors become ConfigError.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace c3r
