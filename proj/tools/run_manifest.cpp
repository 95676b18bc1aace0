#include "run_manifest.hpp"

#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

#include "faclens/error.hpp"

namespace faclens::cli {

namespace {

class Digest {
public:
    Digest() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    }
    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256 update failed");
    }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw Error("sha256 final failed");
        std::ostringstream out;
        for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
        return out.str();
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    Digest d;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) d.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

std::string sha256_text(const std::string& text) {
    Digest d;
    d.update(text.data(), text.size());
    return d.hex();
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), start_(std::chrono::steady_clock::now()), started_at_(utc_now()) {}

void RunManifest::set_config(nlohmann::ordered_json config) { config_ = std::move(config); }

void RunManifest::add_seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
    inputs_.push_back({{"role", role},
                       {"path", path.string()},
                       {"bytes", std::filesystem::file_size(path)},
                       {"sha256", sha256_file(path)}});
}

void RunManifest::add_output(const std::string& role, const std::filesystem::path& path) {
    outputs_.emplace_back(role, path);
}

void RunManifest::phase(const std::string& name, double seconds) { phases_[name] = seconds; }

void RunManifest::write(const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["config"] = config_;
    j["config_hash"] = sha256_text(config_.dump());
    j["seeds"] = seeds_;
    j["inputs"] = inputs_;
    auto outs = nlohmann::ordered_json::array();
    for (const auto& [role, p] : outputs_) {
        outs.push_back({{"role", role}, {"path", p.string()}, {"sha256", sha256_file(p)}});
    }
    j["outputs"] = outs;
    j["timings"] = {{"started_at", started_at_},
                    {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
                    {"phases", phases_}};
    if (!details_.empty()) j["details"] = details_;
    write_atomically(path, j.dump(2) + "\n");
}

void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    ensure_parent(path);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << bytes;
        out.flush();
        if (!out) throw Error("write to " + tmp.string() + " failed");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace faclens::cli
