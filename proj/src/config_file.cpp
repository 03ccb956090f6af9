#include "mtca/config_file.hpp"

#include <cmath>

#include "mtca/binary_io.hpp"
#include "mtca/error.hpp"

namespace mtca {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string source) {
    KeyValueFile kv;
    kv.source_ = std::move(source);
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto end = text.find('\n');
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(kv.source_ + " line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(kv.source_ + " line " + std::to_string(line_no) + ": empty key");
        if (!kv.entries_.emplace(std::string(key), std::string(trim(line.substr(eq + 1)))).second) {
            throw ConfigError(kv.source_ + " line " + std::to_string(line_no) + ": duplicate key " + std::string(key));
        }
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

bool KeyValueFile::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

const std::string* KeyValueFile::find(std::string_view key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.emplace(key);
    return &it->second;
}

std::string KeyValueFile::get_string(std::string_view key, std::string fallback) {
    const auto* v = find(key);
    return v ? *v : std::move(fallback);
}

double KeyValueFile::get_double(std::string_view key, double fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v->size() || !std::isfinite(out)) {
        throw ConfigError(source_ + ": " + std::string(key) + " is not a number: '" + *v + "'");
    }
    return out;
}

std::uint64_t KeyValueFile::get_u64(std::string_view key, std::uint64_t fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
        if (!v->empty() && (*v)[0] != '-') out = std::stoull(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v->size()) {
        throw ConfigError(source_ + ": " + std::string(key) + " is not a nonnegative integer: '" + *v + "'");
    }
    return out;
}

std::size_t KeyValueFile::get_size(std::string_view key, std::size_t fallback) {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

bool KeyValueFile::get_bool(std::string_view key, bool fallback) {
    const auto* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(source_ + ": " + std::string(key) + " must be true or false");
}

void KeyValueFile::finish() const {
    std::string unknown;
    for (const auto& [key, value] : entries_) {
        if (used_.contains(key)) continue;
        if (!unknown.empty()) unknown += ", ";
        unknown += key;
    }
    if (!unknown.empty()) throw ConfigError(source_ + ": unknown keys: " + unknown);
}

}  // namespace mtca
