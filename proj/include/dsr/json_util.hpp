#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dsr/errors.hpp"

namespace dsr {

using json = nlohmann::json;

// Strict schema check: every key of `obj` must be listed in `allowed`.
inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

// Reads obj[key] into out when present; type errors become ConfigError.
template <typename V>
void read_opt(const json& obj, const char* key, V& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

}  // namespace dsr
