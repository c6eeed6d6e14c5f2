#pragma once

#include "fdm/error.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fdm {

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

struct ManifestOutput {
    std::string path;
    std::string sha256;
};

/// Record of one CLI run. Output paths are stored as given; relative paths
/// resolve against the manifest's directory when verified.
struct RunManifest {
    std::string subcommand;
    std::map<std::string, std::string> config;
    std::vector<std::string> inputs;
    std::vector<ManifestOutput> outputs;
    std::uint64_t seed = 0;
    std::string started_at;
    double wall_clock_seconds = 0.0;

    void add_output(const std::string& path) { outputs.push_back({path, file_sha256(path)}); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["subcommand"] = subcommand;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = inputs;
        auto outs = nlohmann::ordered_json::array();
        for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}});
        j["outputs"] = outs;
        j["started_at"] = started_at;
        j["wall_clock_seconds"] = wall_clock_seconds;
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        try {
            m.subcommand = j.at("subcommand").get<std::string>();
            m.seed = j.at("seed").get<std::uint64_t>();
            m.config = j.at("config").get<std::map<std::string, std::string>>();
            m.inputs = j.at("inputs").get<std::vector<std::string>>();
            for (const auto& o : j.at("outputs"))
                m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
            m.started_at = j.at("started_at").get<std::string>();
            m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("manifest: ") + e.what());
        }
        return m;
    }
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << m.to_json().dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path + ": " + e.what());
    }
    return RunManifest::from_json(j);
}

/// Paths whose current checksum differs from the recorded one (missing
/// files included). Empty when the manifest verifies.
inline std::vector<std::string> verify_manifest(const std::string& path) {
    const auto m = load_manifest(path);
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<std::string> bad;
    for (const auto& o : m.outputs) {
        std::filesystem::path p(o.path);
        if (p.is_relative() && !std::filesystem::exists(p)) p = base / p;
        try {
            if (file_sha256(p.string()) != o.sha256) bad.push_back(o.path);
        } catch (const IoError&) {
            bad.push_back(o.path);
        }
    }
    return bad;
}

} // namespace fdm
