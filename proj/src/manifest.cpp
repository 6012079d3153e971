#include "factorkit/manifest.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "factorkit/binio.hpp"
#include "factorkit/errors.hpp"

namespace factorkit::cli {

namespace {
constexpr const char* kConfigMarker = "--- config ---";
}

void write_manifest(const RunManifest& m, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/manifest.txt";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("manifest: cannot open " + path);
    os << "factorkit_version=" << kVersion << "\n"
       << "command=" << m.command << "\n"
       << "seed=" << m.seed << "\n"
       << "config_hash=" << m.config_hash << "\n"
       << "dataset_hash=" << m.dataset_hash << "\n"
       << "dataset_path=" << m.dataset_path << "\n"
       << "started_at=" << m.started_at << "\n"
       << "finished_at=" << m.finished_at << "\n";
    for (const auto& out : m.outputs) os << "output=" << out << "\n";
    if (!m.config_text.empty()) {
        os << kConfigMarker << "\n" << m.config_text;
    }
    if (!os) throw IoError("manifest: write failed for " + path);
}

RunManifest read_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.txt";
    std::ifstream is(path);
    if (!is) throw IoError("manifest: cannot open " + path);
    RunManifest m;
    std::string line;
    bool in_config = false;
    while (std::getline(is, line)) {
        if (in_config) {
            m.config_text += line;
            m.config_text += '\n';
            continue;
        }
        if (line == kConfigMarker) {
            in_config = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "command") m.command = value;
        else if (key == "seed") m.seed = std::stoull(value);
        else if (key == "config_hash") m.config_hash = std::stoull(value);
        else if (key == "dataset_hash") m.dataset_hash = std::stoull(value);
        else if (key == "dataset_path") m.dataset_path = value;
        else if (key == "started_at") m.started_at = value;
        else if (key == "finished_at") m.finished_at = value;
        else if (key == "output") m.outputs.push_back(value);
    }
    return m;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("hash_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = binio::fnv1a(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

}  // namespace factorkit::cli
