#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "blankit/error.hpp"

namespace blankit {

using json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out)
        fail(ErrorKind::Io, "short write to " + path.string());
}

inline json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Schema, origin + ": " + e.what());
    }
}

inline json read_json_file(const std::filesystem::path& path) {
    return parse_json(read_text_file(path), path.string());
}

/// Pretty-printed with a trailing newline; key order is nlohmann's sorted map
/// order so output is stable across runs.
inline void write_json_file(const std::filesystem::path& path, const json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

/// Typed field access that reports schema violations instead of leaking
/// nlohmann exceptions.
template <typename T>
T get_field(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.is_object() || !obj.contains(key))
        fail(ErrorKind::Schema, ctx + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, ctx + ": bad field '" + key + "': " + e.what());
    }
}

template <typename T>
T get_field_or(const json& obj, const char* key, T fallback, const std::string& ctx) {
    if (!obj.is_object() || !obj.contains(key))
        return fallback;
    return get_field<T>(obj, key, ctx);
}

}  // namespace blankit
