#pragma once

// Run plumbing for the command-line front end: schema-checked config access,
// atomic output staging, checksums and the run manifest.

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmcav/errors.hpp"
#include "mmcav/io.hpp"

namespace mmcav::run {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* tool_name = "mmcav";
inline constexpr const char* tool_version = "1.0.0";
inline constexpr const char* output_root_env = "MMCAV_OUTPUT_ROOT";

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Read-only view of one JSON object that records which keys were consumed,
/// so unknown keys can be rejected with their full path.
class Cfg {
public:
    Cfg(json j, std::string path = {}) : j_(std::move(j)), path_(std::move(path)) {
        if (j_.is_null()) j_ = json::object();
        if (!j_.is_object()) throw UsageError("must be a JSON object", path_.empty() ? "<config>" : path_);
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const json& raw() const { return j_; }

    bool has(const std::string& key) const {
        used_.insert(key);
        return j_.contains(key);
    }

    std::optional<double> opt_num(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        const auto& v = j_.at(key);
        if (!v.is_number()) throw UsageError("must be a number", at(key));
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw UsageError("must be finite", at(key));
        return x;
    }

    double num(const std::string& key, double fallback) const { return opt_num(key).value_or(fallback); }

    double num_req(const std::string& key) const {
        auto v = opt_num(key);
        if (!v) throw UsageError("required field is missing", at(key));
        return *v;
    }

    long long integer(const std::string& key, long long fallback, long long min = LLONG_MIN) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) throw UsageError("must be an integer", at(key));
        const long long x = v.get<long long>();
        if (x < min) throw UsageError("must be >= " + std::to_string(min), at(key));
        return x;
    }

    std::string str(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_string()) throw UsageError("must be a string", at(key));
        return v.get<std::string>();
    }

    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) throw UsageError("must be true or false", at(key));
        return v.get<bool>();
    }

    Cfg obj(const std::string& key) const {
        if (!has(key)) return Cfg(json::object(), at(key));
        return Cfg(j_.at(key), at(key));
    }

    std::vector<double> nums(const std::string& key, std::vector<double> fallback = {}) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_array()) throw UsageError("must be an array of numbers", at(key));
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) throw UsageError("must be a number", at(key) + "[" + std::to_string(i) + "]");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    /// Array of objects, each a child config named key[i].
    std::vector<Cfg> objs(const std::string& key) const {
        if (!has(key)) return {};
        const auto& v = j_.at(key);
        if (!v.is_array()) throw UsageError("must be an array of objects", at(key));
        std::vector<Cfg> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], at(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    std::vector<std::string> strs(const std::string& key) const {
        if (!has(key)) return {};
        const auto& v = j_.at(key);
        if (v.is_string()) return {v.get<std::string>()};
        if (!v.is_array()) throw UsageError("must be a string or an array of strings", at(key));
        std::vector<std::string> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_string()) throw UsageError("must be a string", at(key) + "[" + std::to_string(i) + "]");
            out.push_back(v[i].get<std::string>());
        }
        return out;
    }

    /// Rejects keys that no accessor asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw UsageError("unknown field", at(k));
    }

private:
    json j_;
    std::string path_;
    mutable std::set<std::string> used_;
};

/// Output directory written atomically: files go to a hidden sibling staging
/// directory that is renamed into place on commit. An interrupted run leaves
/// only the staging directory behind.
class StagedOutput {
public:
    explicit StagedOutput(fs::path out) : out_(fs::absolute(std::move(out)).lexically_normal()) {
        if (out_.filename().empty()) out_ = out_.parent_path();
        if (out_.filename().empty()) throw UsageError("output directory must not be the filesystem root", "--out");
        fs::create_directories(out_.parent_path());
        static std::atomic<int> counter{0};
        staging_ = out_.parent_path() / ("." + out_.filename().string() + ".staging-" + std::to_string(::getpid()) +
                                         "-" + std::to_string(counter++));
        fs::remove_all(staging_);
        fs::create_directory(staging_);
    }

    StagedOutput(const StagedOutput&) = delete;
    StagedOutput& operator=(const StagedOutput&) = delete;

    ~StagedOutput() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    const fs::path& dir() const { return staging_; }
    const fs::path& target() const { return out_; }

    void write(const std::string& name, const std::string& text) const { io::write_text(staging_ / name, text); }

    void commit() {
        const fs::path old = out_.parent_path() / ("." + out_.filename().string() + ".old-" + std::to_string(::getpid()));
        const bool replace = fs::exists(out_);
        if (replace) {
            fs::remove_all(old);
            fs::rename(out_, old);
        }
        fs::rename(staging_, out_);
        committed_ = true;
        if (replace) fs::remove_all(old);
    }

private:
    fs::path out_, staging_;
    bool committed_ = false;
};

struct Artifact {
    std::string file;
    std::uintmax_t bytes;
    std::string sha256;
};

/// Checksums of every regular file in `dir`, sorted by relative path.
inline std::vector<Artifact> checksum_tree(const fs::path& dir) {
    std::vector<Artifact> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string text = io::read_text(e.path());
        out.push_back({fs::relative(e.path(), dir).generic_string(), text.size(), sha256_hex(text)});
    }
    std::sort(out.begin(), out.end(), [](const Artifact& a, const Artifact& b) { return a.file < b.file; });
    return out;
}

struct ManifestInfo {
    std::string command;
    json config;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string started_utc;
    json conventions = json::array();
    json failures = json::array();
    json summary = json::object();
};

inline constexpr const char* manifest_name = "manifest.json";

/// Writes manifest.json last, covering every file already in the staging area.
inline json write_manifest(const StagedOutput& out, const ManifestInfo& info) {
    json arts = json::array();
    for (const auto& a : checksum_tree(out.dir())) arts.push_back({{"file", a.file}, {"bytes", a.bytes}, {"sha256", a.sha256}});
    json m = {{"tool", tool_name},
              {"version", tool_version},
              {"command", info.command},
              {"config_sha256", sha256_hex(info.config.dump())},
              {"config", info.config},
              {"seed", info.seed},
              {"threads", info.threads},
              {"started_utc", info.started_utc},
              {"finished_utc", utc_now()},
              {"artifacts", arts},
              {"conventions", info.conventions},
              {"failures", info.failures},
              {"summary", info.summary}};
    out.write(manifest_name, m.dump(2) + "\n");
    return m;
}

}  // namespace mmcav::run
