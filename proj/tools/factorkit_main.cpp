#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "factorkit/config.hpp"
#include "factorkit/evaluation.hpp"
#include "factorkit/image_io.hpp"
#include "factorkit/manifest.hpp"
#include "factorkit/training.hpp"

namespace {

using namespace factorkit;

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitContract = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitIo = 6;
constexpr int kExitState = 7;

void print_usage() {
    std::cout <<
        "factorkit " << cli::kVersion << " - conditional VAE-GAN with adversarial information factorization\n"
        "\n"
        "usage: factorkit <subcommand> [flags]\n"
        "\n"
        "subcommands:\n"
        "  gen-data  --n N --seed S --out FILE [--size 32] [--channels 3]\n"
        "            generate the synthetic sprite dataset\n"
        "  train     --config FILE --data FILE --out DIR [--resume CKPT]\n"
        "            train a model, writing metrics.log and checkpoints\n"
        "  eval      --checkpoint CKPT --data FILE [--oracle pixel|trained]\n"
        "            [--probe-seed N] [--out DIR]\n"
        "            compute MSE, edit-success rates, encoder accuracy, probe accuracy\n"
        "  ablate    --grid FILE --data FILE --out DIR [--oracle pixel|trained]\n"
        "            train and evaluate every [ablation.rowN] of the grid config\n"
        "  edit      --checkpoint CKPT --data FILE --target {0,1} --grid OUT.png\n"
        "            [--count 8]\n"
        "            render originals and attribute-edited reconstructions\n"
        "  report    --run DIR\n"
        "            summarize a finished run directory\n";
}

// Flag parser: every flag takes one value; unknown flags are usage errors.
class Flags {
public:
    Flags(int argc, char** argv, int first) {
        for (int i = first; i < argc; ++i) {
            std::string key = argv[i];
            if (key.rfind("--", 0) != 0)
                throw UsageError("unexpected argument '" + key + "'");
            key = key.substr(2);
            if (i + 1 >= argc) throw UsageError("flag --" + key + " needs a value");
            values_[key] = argv[++i];
        }
    }

    struct UsageError : std::runtime_error {
        using std::runtime_error::runtime_error;
    };

    std::string require(const std::string& key, const std::set<std::string>& known) {
        check_known(known);
        const auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("missing required flag --" + key);
        return it->second;
    }

    std::optional<std::string> get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    void check_known(const std::set<std::string>& known) const {
        for (const auto& [key, value] : values_)
            if (!known.count(key)) throw UsageError("unknown flag --" + key);
    }

private:
    std::map<std::string, std::string> values_;
};

int64_t to_int(const std::string& name, const std::string& value) {
    try {
        size_t used = 0;
        const int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw Flags::UsageError("flag --" + name + " expects an integer, got '" + value + "'");
    }
}

models::OracleClassifier make_oracle(const std::string& kind, const synthdata::Dataset& data) {
    if (kind == "pixel") return models::OracleClassifier{};
    if (kind == "trained") return evaluation::train_oracle(data);
    throw Flags::UsageError("flag --oracle expects 'pixel' or 'trained', got '" + kind + "'");
}

void print_metrics(const evaluation::MetricsReport& m, std::ostream& os) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mse = %.9g\n", m.mse);
    os << buf;
    std::snprintf(buf, sizeof(buf), "c_attr0 = %.9g\n", m.c_attr0);
    os << buf;
    std::snprintf(buf, sizeof(buf), "c_attr1 = %.9g\n", m.c_attr1);
    os << buf;
    std::snprintf(buf, sizeof(buf), "enc_cls_acc = %.9g\n", m.enc_cls_acc);
    os << buf;
    std::snprintf(buf, sizeof(buf), "aux_probe_acc = %.9g\n", m.aux_probe_acc);
    os << buf;
    os << "n_eval = " << m.n_eval << "\n";
}

std::string command_echo(int argc, char** argv) {
    std::string cmd;
    for (int i = 1; i < argc; ++i) {
        if (i > 1) cmd += ' ';
        cmd += argv[i];
    }
    return cmd;
}

int cmd_gen_data(Flags& flags) {
    flags.check_known({"n", "seed", "out", "size", "channels"});
    const int64_t n = to_int("n", flags.require("n", {"n", "seed", "out", "size", "channels"}));
    const auto seed = static_cast<uint64_t>(
        to_int("seed", flags.require("seed", {"n", "seed", "out", "size", "channels"})));
    const std::string out = flags.require("out", {"n", "seed", "out", "size", "channels"});
    const int size = flags.get("size") ? static_cast<int>(to_int("size", *flags.get("size"))) : 32;
    const int channels =
        flags.get("channels") ? static_cast<int>(to_int("channels", *flags.get("channels"))) : 3;

    const auto data = synthdata::generate_dataset(n, seed, synthdata::SpecRanges{}, size, channels);
    synthdata::save_dataset(data, out);
    std::cout << "wrote " << data.n() << " images (" << size << "x" << size << "x" << channels
              << ", train/val/test = " << data.manifest.n_train << "/" << data.manifest.n_val
              << "/" << data.manifest.n_test << ") to " << out << "\n";
    return 0;
}

int cmd_train(Flags& flags, int argc, char** argv) {
    const std::set<std::string> known = {"config", "data", "out", "resume"};
    const std::string config_path = flags.require("config", known);
    const std::string data_path = flags.require("data", known);
    const std::string out_dir = flags.require("out", known);

    const auto cfg = config::load_config(config_path);
    const auto data = synthdata::load_dataset(data_path);

    cli::RunManifest manifest;
    manifest.command = command_echo(argc, argv);
    manifest.config_hash = cfg.hash();
    manifest.dataset_hash = cli::hash_file(data_path);
    manifest.dataset_path = data_path;
    manifest.seed = cfg.seed;
    manifest.started_at = cli::timestamp_utc();
    manifest.config_text = cfg.serialize();
    cli::write_manifest(manifest, out_dir);

    training::TrainResult result;
    if (const auto resume_path = flags.get("resume"))
        result = training::resume(data, cfg, *resume_path, out_dir);
    else
        result = training::train(data, cfg, out_dir);

    manifest.finished_at = cli::timestamp_utc();
    manifest.outputs.push_back("metrics.log");
    for (const auto& path : result.checkpoint_paths)
        manifest.outputs.push_back(std::filesystem::path(path).filename().string());
    cli::write_manifest(manifest, out_dir);

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "trained %d epochs: val rec=%.4f kl=%.4f enc_total=%.4f mse=%.4f\n", cfg.epochs,
                  result.final_val.rec, result.final_val.kl, result.final_val.enc_total,
                  result.final_val_mse);
    std::cout << buf << "final checkpoint: "
              << (result.checkpoint_paths.empty() ? std::string("(none)")
                                                  : result.checkpoint_paths.back())
              << "\n";
    return 0;
}

int cmd_eval(Flags& flags, int argc, char** argv) {
    const std::set<std::string> known = {"checkpoint", "data", "oracle", "probe-seed", "out"};
    const std::string ckpt_path = flags.require("checkpoint", known);
    const std::string data_path = flags.require("data", known);
    const auto data = synthdata::load_dataset(data_path);

    auto ck = training::load_checkpoint_raw(ckpt_path);
    const auto oracle = make_oracle(flags.get("oracle").value_or("pixel"), data);
    const auto probe_seed = static_cast<uint64_t>(
        flags.get("probe-seed") ? to_int("probe-seed", *flags.get("probe-seed")) : 7);

    const auto report = evaluation::evaluate(ck.bundle, data, oracle, probe_seed);
    print_metrics(report, std::cout);

    if (const auto out_dir = flags.get("out")) {
        cli::RunManifest manifest;
        manifest.command = command_echo(argc, argv);
        manifest.config_hash = ck.config_hash;
        manifest.dataset_hash = cli::hash_file(data_path);
        manifest.dataset_path = data_path;
        manifest.started_at = manifest.finished_at = cli::timestamp_utc();
        manifest.config_text = ck.config_text;
        manifest.outputs.push_back("metrics.txt");
        cli::write_manifest(manifest, *out_dir);
        std::ofstream os(*out_dir + "/metrics.txt");
        print_metrics(report, os);
    }
    return 0;
}

int cmd_ablate(Flags& flags, int argc, char** argv) {
    const std::set<std::string> known = {"grid", "data", "out", "oracle"};
    const std::string grid_path = flags.require("grid", known);
    const std::string data_path = flags.require("data", known);
    const std::string out_dir = flags.require("out", known);

    const auto grid = config::load_grid(grid_path);
    const auto data = synthdata::load_dataset(data_path);
    const auto oracle = make_oracle(flags.get("oracle").value_or("pixel"), data);

    cli::RunManifest manifest;
    manifest.command = command_echo(argc, argv);
    manifest.config_hash = grid.base.hash();
    manifest.dataset_hash = cli::hash_file(data_path);
    manifest.dataset_path = data_path;
    manifest.seed = grid.seeds.front();
    manifest.started_at = cli::timestamp_utc();
    manifest.config_text = grid.base.serialize();
    cli::write_manifest(manifest, out_dir);

    const auto results = evaluation::run_ablation(data, grid.rows, grid.seeds, oracle, out_dir);
    const std::string table = evaluation::format_table(results);
    std::cout << table;
    std::ofstream(out_dir + "/table.txt") << table;
    std::ofstream(out_dir + "/records.tsv") << evaluation::format_records(results);

    manifest.finished_at = cli::timestamp_utc();
    manifest.outputs = {"table.txt", "records.tsv"};
    cli::write_manifest(manifest, out_dir);
    return 0;
}

int cmd_edit(Flags& flags) {
    const std::set<std::string> known = {"checkpoint", "data", "target", "grid", "count"};
    const std::string ckpt_path = flags.require("checkpoint", known);
    const std::string data_path = flags.require("data", known);
    const int target = static_cast<int>(to_int("target", flags.require("target", known)));
    const std::string grid_path = flags.require("grid", known);
    const int64_t count = flags.get("count") ? to_int("count", *flags.get("count")) : 8;
    if (target != 0 && target != 1)
        throw Flags::UsageError("flag --target expects 0 or 1");

    const auto data = synthdata::load_dataset(data_path);
    auto ck = training::load_checkpoint_raw(ckpt_path);
    const auto [test_x, test_y] = data.split_batch(synthdata::Split::test);
    if (test_x.dim(0) < count)
        throw ContractError("edit: test split smaller than requested --count");
    std::vector<int64_t> shape = test_x.shape;
    shape[0] = count;
    Tensor<float> originals = Tensor<float>::uninit(shape);
    const int64_t stride = test_x.numel() / test_x.dim(0);
    std::memcpy(originals.ptr(), test_x.ptr(),
                sizeof(float) * static_cast<size_t>(count * stride));

    const auto edited = evaluation::edit_attribute(ck.bundle, originals, target);
    evaluation::render_grid({originals, edited}, grid_path);
    std::cout << "wrote " << count << " original/edited pairs (target=" << target << ") to "
              << grid_path << "\n";
    return 0;
}

int cmd_report(Flags& flags) {
    const std::set<std::string> known = {"run"};
    const std::string run_dir = flags.require("run", known);
    const auto manifest = cli::read_manifest(run_dir);
    std::cout << "run: " << manifest.command << "\n"
              << "started: " << manifest.started_at << "  finished: " << manifest.finished_at
              << "\n"
              << "config hash: " << manifest.config_hash
              << "  dataset hash: " << manifest.dataset_hash << "\n";

    const std::string table_path = run_dir + "/table.txt";
    if (std::filesystem::exists(table_path)) {
        std::ifstream is(table_path);
        std::cout << "\n" << is.rdbuf();
        return 0;
    }
    const std::string metrics_path = run_dir + "/metrics.log";
    if (std::filesystem::exists(metrics_path)) {
        std::ifstream is(metrics_path);
        std::string line, last_val;
        int64_t steps = 0;
        while (std::getline(is, line)) {
            if (line.rfind("val ", 0) == 0) last_val = line;
            else ++steps;
        }
        std::cout << "steps logged: " << steps << "\n";
        if (!last_val.empty()) std::cout << "final " << last_val << "\n";
        return 0;
    }
    const std::string metrics_txt = run_dir + "/metrics.txt";
    if (std::filesystem::exists(metrics_txt)) {
        std::ifstream is(metrics_txt);
        std::cout << "\n" << is.rdbuf();
        return 0;
    }
    std::cout << "(no metrics artifacts found in " << run_dir << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2 || std::string(argv[1]) == "--help" || std::string(argv[1]) == "help") {
        print_usage();
        return argc < 2 ? kExitUsage : 0;
    }
    const std::string subcommand = argv[1];
    try {
        Flags flags(argc, argv, 2);
        if (subcommand == "gen-data") return cmd_gen_data(flags);
        if (subcommand == "train") return cmd_train(flags, argc, argv);
        if (subcommand == "eval") return cmd_eval(flags, argc, argv);
        if (subcommand == "ablate") return cmd_ablate(flags, argc, argv);
        if (subcommand == "edit") return cmd_edit(flags);
        if (subcommand == "report") return cmd_report(flags);
        std::cerr << "unknown subcommand '" << subcommand << "'\n\n";
        print_usage();
        return kExitUsage;
    } catch (const Flags::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        print_usage();
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return kExitContract;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return kExitState;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
