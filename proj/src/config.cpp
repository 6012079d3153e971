#include "factorkit/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "factorkit/errors.hpp"

namespace factorkit::config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean value for " + key + ": '" + value + "'");
}

void apply_key(training::ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "alpha") cfg.alpha = parse_double(key, value);
    else if (key == "beta") cfg.beta = parse_double(key, value);
    else if (key == "rho") cfg.rho = parse_double(key, value);
    else if (key == "delta") cfg.delta = parse_double(key, value);
    else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
    else if (key == "aux_learning_rate") cfg.aux_learning_rate = parse_double(key, value);
    else if (key == "momentum") cfg.momentum = parse_double(key, value);
    else if (key == "rms_gamma") cfg.rms_gamma = parse_double(key, value);
    else if (key == "rms_eps") cfg.rms_eps = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "d_z") cfg.d_z = static_cast<int>(parse_int(key, value));
    else if (key == "base_channels") cfg.base_channels = static_cast<int>(parse_int(key, value));
    else if (key == "residual_blocks")
        cfg.residual_blocks = static_cast<int>(parse_int(key, value));
    else if (key == "share_trunk") cfg.share_trunk = parse_bool(key, value);
    else if (key == "aux_hidden") cfg.aux_hidden = static_cast<int>(parse_int(key, value));
    else if (key == "init_gain") cfg.init_gain = parse_double(key, value);
    else if (key == "attr_input_scale") cfg.attr_input_scale = parse_double(key, value);
    else if (key == "leak") cfg.leak = parse_double(key, value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "mode") cfg.mode = training::parse_mode(value);
    else if (key == "class_rec_term") cfg.class_rec_term = parse_bool(key, value);
    else if (key == "enc_gan_term") cfg.enc_gan_term = parse_bool(key, value);
    else if (key == "aux_ratio") cfg.aux_ratio = static_cast<int>(parse_int(key, value));
    else if (key == "checkpoint_every")
        cfg.checkpoint_every = static_cast<int>(parse_int(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<uint64_t> parse_seed_list(const std::string& value) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        seeds.push_back(static_cast<uint64_t>(parse_int("seeds", item)));
    }
    if (seeds.empty()) throw ConfigError("config: empty seeds list");
    return seeds;
}

struct Line {
    std::string section;
    std::string key;
    std::string value;
};

std::vector<Line> tokenize(const std::string& text) {
    std::vector<Line> lines;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
        lines.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
    }
    return lines;
}

}  // namespace

training::ExperimentConfig parse_config(const std::string& text) {
    training::ExperimentConfig cfg;
    for (const auto& line : tokenize(text)) {
        if (!line.section.empty())
            throw ConfigError("config: unexpected section [" + line.section +
                              "] in a plain config");
        apply_key(cfg, line.key, line.value);
    }
    cfg.validate();
    return cfg;
}

training::ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    std::stringstream buffer;
    buffer << is.rdbuf();
    return parse_config(buffer.str());
}

AblationGrid parse_grid(const std::string& text) {
    AblationGrid grid;
    grid.seeds = {1, 2, 3};
    std::vector<std::string> row_order;
    std::vector<std::vector<std::pair<std::string, std::string>>> row_keys;

    for (const auto& line : tokenize(text)) {
        if (line.section.empty()) {
            apply_key(grid.base, line.key, line.value);
        } else if (line.section == "ablation") {
            if (line.key == "seeds") grid.seeds = parse_seed_list(line.value);
            else throw ConfigError("config: unknown [ablation] key '" + line.key + "'");
        } else if (line.section.rfind("ablation.", 0) == 0) {
            const std::string row = line.section.substr(std::string("ablation.").size());
            auto it = std::find(row_order.begin(), row_order.end(), row);
            if (it == row_order.end()) {
                row_order.push_back(row);
                row_keys.emplace_back();
                it = row_order.end() - 1;
            }
            row_keys[static_cast<size_t>(it - row_order.begin())].push_back(
                {line.key, line.value});
        } else {
            throw ConfigError("config: unknown section [" + line.section + "]");
        }
    }
    if (row_order.empty()) throw ConfigError("config: grid file declares no [ablation.*] rows");

    grid.base.validate();
    for (size_t i = 0; i < row_order.size(); ++i) {
        evaluation::AblationRow row;
        row.name = row_order[i];
        row.config = grid.base;
        for (const auto& [key, value] : row_keys[i]) {
            if (key == "name") row.name = value;
            else apply_key(row.config, key, value);
        }
        row.config.validate();
        grid.rows.push_back(std::move(row));
    }
    return grid;
}

AblationGrid load_grid(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    std::stringstream buffer;
    buffer << is.rdbuf();
    return parse_grid(buffer.str());
}

}  // namespace factorkit::config
