#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace mtca {

// `key = value` lines; '#' starts a comment. Every key must be consumed by a
// getter before finish(), otherwise it is reported as unknown.
class KeyValueFile {
public:
    static KeyValueFile parse(std::string_view text, std::string source = "config");
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(std::string_view key) const;
    std::string get_string(std::string_view key, std::string fallback);
    double get_double(std::string_view key, double fallback);
    std::size_t get_size(std::string_view key, std::size_t fallback);
    std::uint64_t get_u64(std::string_view key, std::uint64_t fallback);
    bool get_bool(std::string_view key, bool fallback);

    // Throws ConfigError naming any key no getter asked for.
    void finish() const;

    const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return entries_; }

private:
    const std::string* find(std::string_view key);

    std::string source_;
    std::map<std::string, std::string, std::less<>> entries_;
    std::set<std::string, std::less<>> used_;
};

}  // namespace mtca
