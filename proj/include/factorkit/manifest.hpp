#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace factorkit::cli {

inline constexpr const char* kVersion = "0.1.0";

// Reproducibility record written into every run's output directory before
// long-running work starts, then finalized on success.
struct RunManifest {
    std::string command;
    uint64_t config_hash = 0;
    uint64_t dataset_hash = 0;
    std::string dataset_path;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> outputs;
    std::string config_text;  // full echo; a run is reproducible from this file
};

void write_manifest(const RunManifest& manifest, const std::string& dir);
RunManifest read_manifest(const std::string& dir);

uint64_t hash_file(const std::string& path);
std::string timestamp_utc();

}  // namespace factorkit::cli
