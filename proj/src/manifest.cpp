#include "mtca/manifest.hpp"

#include <chrono>
#include <ctime>

#include <json.hpp>

#include "mtca/binary_io.hpp"
#include "mtca/digest.hpp"
#include "mtca/error.hpp"

namespace mtca {

namespace {

nlohmann::ordered_json entries_json(const std::vector<ManifestEntry>& entries) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& e : entries) out.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return out;
}

std::vector<ManifestEntry> entries_from(const nlohmann::json& j) {
    std::vector<ManifestEntry> out;
    for (const auto& e : j) out.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    return out;
}

nlohmann::ordered_json body(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seeds"] = m.seeds;
    j["inputs"] = entries_json(m.inputs);
    j["artifacts"] = entries_json(m.artifacts);
    return j;
}

}  // namespace

std::string RunManifest::digest() const { return sha256_hex(body(*this).dump()); }

std::string format_manifest(const RunManifest& m) {
    auto j = body(m);
    j["digest"] = m.digest();
    j["started"] = m.started;
    j["finished"] = m.finished;
    return j.dump(2) + "\n";
}

RunManifest parse_manifest(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config").get<std::string>();
        m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        m.inputs = entries_from(j.at("inputs"));
        m.artifacts = entries_from(j.at("artifacts"));
        m.started = j.value("started", "");
        m.finished = j.value("finished", "");
        if (j.contains("digest") && j.at("digest").get<std::string>() != m.digest()) {
            throw DigestError("manifest digest does not match its contents");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    write_text_file(dir / kManifestFile, format_manifest(m));
}

std::optional<RunManifest> read_manifest(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / kManifestFile)) return std::nullopt;
    return parse_manifest(read_text_file(dir / kManifestFile));
}

ManifestEntry digest_entry(const std::filesystem::path& file, std::string name) {
    return {std::move(name), sha256_file(file)};
}

void verify_artifacts(const std::filesystem::path& dir, const RunManifest& m) {
    for (const auto& a : m.artifacts) {
        const auto path = dir / a.path;
        if (!std::filesystem::exists(path)) throw DigestError(path.string() + " is listed in the manifest but missing");
        if (sha256_file(path) != a.sha256) throw DigestError(path.string() + " does not match its manifest digest");
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace mtca
