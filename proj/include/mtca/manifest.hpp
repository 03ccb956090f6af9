#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtca {

struct ManifestEntry {
    std::string path;
    std::string sha256;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// What a command read and wrote. Artifact paths are relative to the output
// directory; input paths are kept as given.
struct RunManifest {
    std::string command;
    std::string config;  // snapshot of the effective config
    std::map<std::string, std::uint64_t> seeds;
    std::vector<ManifestEntry> inputs;
    std::vector<ManifestEntry> artifacts;
    std::string started;   // UTC, ISO 8601
    std::string finished;

    // SHA-256 over everything except the timestamps.
    std::string digest() const;

    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

inline constexpr char kManifestFile[] = "manifest.json";

std::string format_manifest(const RunManifest& m);
RunManifest parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
// Nullopt when `dir` has no manifest.
std::optional<RunManifest> read_manifest(const std::filesystem::path& dir);

ManifestEntry digest_entry(const std::filesystem::path& file, std::string name);

// Throws DigestError when a listed artifact is missing or changed.
void verify_artifacts(const std::filesystem::path& dir, const RunManifest& m);

std::string utc_timestamp();

}  // namespace mtca
