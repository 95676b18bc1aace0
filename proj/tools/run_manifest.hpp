#pragma once

// Per-invocation record of what a command read, wrote and how long it took.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace faclens::cli {

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_text(const std::string& text);

class RunManifest {
public:
    explicit RunManifest(std::string command);

    void set_config(nlohmann::ordered_json config);
    void add_seed(const std::string& name, std::uint64_t value);
    void add_input(const std::string& role, const std::filesystem::path& path);
    void add_output(const std::string& role, const std::filesystem::path& path);
    void phase(const std::string& name, double seconds);
    nlohmann::ordered_json& details() { return details_; }

    /// Digests outputs, then writes via a temporary file and rename.
    void write(const std::filesystem::path& path);

private:
    std::string command_;
    nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json seeds_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json inputs_ = nlohmann::ordered_json::array();
    std::vector<std::pair<std::string, std::filesystem::path>> outputs_;
    nlohmann::ordered_json phases_ = nlohmann::ordered_json::object();
    nlohmann::ordered_json details_ = nlohmann::ordered_json::object();
    std::chrono::steady_clock::time_point start_;
    std::string started_at_;
};

/// Wall-clock timer for manifest phases.
class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

void ensure_parent(const std::filesystem::path& path);

/// Writes `bytes` to `path` through a sibling temporary and a rename.
void write_atomically(const std::filesystem::path& path, const std::string& bytes);

}  // namespace faclens::cli
