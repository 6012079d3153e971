#pragma once

#include <string>
#include <vector>

#include "factorkit/evaluation.hpp"
#include "factorkit/training.hpp"

namespace factorkit::config {

// Flat key = value text; '#' starts a comment; keys mirror ExperimentConfig.
training::ExperimentConfig parse_config(const std::string& text);
training::ExperimentConfig load_config(const std::string& path);

// Grid files add [ablation] (run-wide keys, e.g. seeds = 1,2,3) and one
// [ablation.rowN] section per row on top of the base config.
struct AblationGrid {
    training::ExperimentConfig base;
    std::vector<uint64_t> seeds;
    std::vector<evaluation::AblationRow> rows;
};

AblationGrid parse_grid(const std::string& text);
AblationGrid load_grid(const std::string& path);

}  // namespace factorkit::config
