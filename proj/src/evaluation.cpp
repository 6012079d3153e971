#include "factorkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "factorkit/image_io.hpp"
#include "factorkit/optimizer.hpp"

namespace factorkit::evaluation {

namespace {

constexpr int64_t kEvalBatch = 256;

// Copies rows [begin, begin+count) of an (N, ...) tensor.
Tensor<float> rows_of(const Tensor<float>& src, int64_t begin, int64_t count) {
    std::vector<int64_t> shape = src.shape;
    shape[0] = count;
    Tensor<float> out = Tensor<float>::uninit(shape);
    const int64_t stride = src.numel() / src.dim(0);
    std::memcpy(out.ptr(), src.ptr() + begin * stride,
                sizeof(float) * static_cast<size_t>(count * stride));
    return out;
}

void require_trained(const models::NetworkBundle<float>& bundle, const char* what) {
    if (!bundle.trained)
        throw StateError(std::string(what) + ": bundle is untrained (no checkpoint loaded)");
}

double accuracy(const std::vector<uint8_t>& predicted, const std::vector<uint8_t>& truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ContractError("accuracy: label vectors must match and be non-empty");
    int64_t correct = 0;
    for (size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

// Dense-probe forward on (B, d_z) codes; shared by probe training and eval.
Tensor<float> probe_forward(models::Net<float>& probe, const models::ArchSpec& arch,
                            const Tensor<float>& codes) {
    ad::Tape<float> tape;
    auto out = models::aux_graph(tape, probe, arch, tape.leaf(codes), ad::kOracle);
    return tape.val(out);
}

double probe_split_accuracy(models::Net<float>& probe, const models::ArchSpec& arch,
                            const Tensor<float>& codes, const std::vector<uint8_t>& labels) {
    std::vector<uint8_t> pred(labels.size());
    const int64_t n = codes.dim(0);
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        const auto probs = probe_forward(probe, arch, rows_of(codes, start, b));
        for (int64_t i = 0; i < b; ++i)
            pred[static_cast<size_t>(start + i)] = probs[i] > 0.5f ? 1 : 0;
    }
    return accuracy(pred, labels);
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
    MetricsReport mean;
    if (reports.empty()) return mean;
    for (const auto& r : reports) {
        mean.mse += r.mse;
        mean.c_attr0 += r.c_attr0;
        mean.c_attr1 += r.c_attr1;
        mean.enc_cls_acc += r.enc_cls_acc;
        mean.aux_probe_acc += r.aux_probe_acc;
        mean.n_eval += r.n_eval;
    }
    const double k = static_cast<double>(reports.size());
    mean.mse /= k;
    mean.c_attr0 /= k;
    mean.c_attr1 /= k;
    mean.enc_cls_acc /= k;
    mean.aux_probe_acc /= k;
    mean.n_eval = reports.front().n_eval;
    return mean;
}

}  // namespace

Tensor<float> encode_means(models::NetworkBundle<float>& bundle, const Tensor<float>& images) {
    const int64_t n = images.dim(0);
    Tensor<float> out = Tensor<float>::uninit({n, bundle.arch.d_z});
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        const auto post = models::encode(bundle, rows_of(images, start, b),
                                         Tensor<float>::zeros({b, bundle.arch.d_z}));
        std::memcpy(out.ptr() + start * bundle.arch.d_z, post.mu.ptr(),
                    sizeof(float) * static_cast<size_t>(b * bundle.arch.d_z));
    }
    return out;
}

Tensor<float> encode_samples(models::NetworkBundle<float>& bundle, const Tensor<float>& images,
                             uint64_t noise_seed) {
    const int64_t n = images.dim(0);
    Rng rng(derive_seed(noise_seed, 0x636f646573ULL));
    Tensor<float> out = Tensor<float>::uninit({n, bundle.arch.d_z});
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        Tensor<float> eps = Tensor<float>::uninit({b, bundle.arch.d_z});
        for (auto& v : eps.data) v = static_cast<float>(rng.normal());
        const auto post = models::encode(bundle, rows_of(images, start, b), eps);
        std::memcpy(out.ptr() + start * bundle.arch.d_z, post.z_hat.ptr(),
                    sizeof(float) * static_cast<size_t>(b * bundle.arch.d_z));
    }
    return out;
}

Tensor<float> encode_labels(models::NetworkBundle<float>& bundle, const Tensor<float>& images) {
    const int64_t n = images.dim(0);
    Tensor<float> out = Tensor<float>::uninit({n, 1});
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        const auto post = models::encode(bundle, rows_of(images, start, b),
                                         Tensor<float>::zeros({b, bundle.arch.d_z}));
        std::memcpy(out.ptr() + start, post.y_hat.ptr(), sizeof(float) * static_cast<size_t>(b));
    }
    return out;
}

Tensor<float> edit_attribute(models::NetworkBundle<float>& bundle, const Tensor<float>& x,
                             int target) {
    require_trained(bundle, "edit_attribute");
    if (target != 0 && target != 1) throw ContractError("edit_attribute: target must be 0 or 1");
    const int64_t n = x.dim(0);
    Tensor<float> out = Tensor<float>::uninit(x.shape);
    const int64_t stride = x.numel() / n;
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        const auto batch = rows_of(x, start, b);
        const auto post =
            models::encode(bundle, batch, Tensor<float>::zeros({b, bundle.arch.d_z}));
        const auto edited =
            models::decode(bundle, post.mu, Tensor<float>::full({b}, static_cast<float>(target)));
        std::memcpy(out.ptr() + start * stride, edited.ptr(),
                    sizeof(float) * static_cast<size_t>(b * stride));
    }
    return out;
}

std::pair<double, double> edit_success_rates(models::NetworkBundle<float>& bundle,
                                             const Tensor<float>& test_x_attr1,
                                             const Classifier& classify) {
    if (test_x_attr1.dim(0) == 0)
        throw ContractError("edit_success_rates: empty attribute-present test set");
    const auto to0 = classify(edit_attribute(bundle, test_x_attr1, 0));
    const auto to1 = classify(edit_attribute(bundle, test_x_attr1, 1));
    int64_t negatives = 0, positives = 0;
    for (const auto l : to0) negatives += l == 0;
    for (const auto l : to1) positives += l == 1;
    const double n = static_cast<double>(test_x_attr1.dim(0));
    return {static_cast<double>(negatives) / n, static_cast<double>(positives) / n};
}

std::pair<double, double> edit_success_rates(models::NetworkBundle<float>& bundle,
                                             const Tensor<float>& test_x_attr1,
                                             const models::OracleClassifier& oracle) {
    return edit_success_rates(bundle, test_x_attr1,
                              [&](const Tensor<float>& x) { return oracle.classify(x); });
}

double mse(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b) || a.numel() == 0) throw ContractError("mse: shape mismatch or empty");
    double total = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        total += d * d;
    }
    return total / static_cast<double>(a.numel());
}

double reconstruction_mse(models::NetworkBundle<float>& bundle, const Tensor<float>& images) {
    const int64_t n = images.dim(0);
    if (n == 0) throw ContractError("reconstruction_mse: empty image set");
    const int64_t stride = images.numel() / n;
    double total = 0.0;
    for (int64_t start = 0; start < n; start += kEvalBatch) {
        const int64_t b = std::min(kEvalBatch, n - start);
        const auto batch = rows_of(images, start, b);
        const auto post =
            models::encode(bundle, batch, Tensor<float>::zeros({b, bundle.arch.d_z}));
        Tensor<float> y({b});
        for (int64_t i = 0; i < b; ++i) y[i] = post.y_hat[i];
        const auto rec = models::decode(bundle, post.mu, y);
        total += mse(rec, batch) * static_cast<double>(b * stride);
    }
    return total / static_cast<double>(n * stride);
}

double encoder_accuracy(models::NetworkBundle<float>& bundle, const Tensor<float>& images,
                        const std::vector<uint8_t>& labels) {
    const auto probs = encode_labels(bundle, images);
    std::vector<uint8_t> pred(labels.size());
    for (int64_t i = 0; i < probs.dim(0); ++i)
        pred[static_cast<size_t>(i)] = probs[i] > 0.5f ? 1 : 0;
    return accuracy(pred, labels);
}

double probe_accuracy(models::NetworkBundle<float>& bundle, const synthdata::Dataset& data,
                      uint64_t seed, int max_epochs, int patience) {
    const auto [train_x, train_y] = data.split_batch(synthdata::Split::train);
    const auto [val_x, val_y] = data.split_batch(synthdata::Split::val);
    const auto [test_x, test_y] = data.split_batch(synthdata::Split::test);
    if (train_x.dim(0) == 0 || test_x.dim(0) == 0)
        throw ContractError("probe_accuracy: needs non-empty train and test splits");

    // The probe grades the codes the way the model produces them: sampled
    // z = mu + sigma * eps (seeded), matching what the adversary sees during
    // training and the H(y|z) reading of the factorization claim.
    const auto train_codes = encode_samples(bundle, train_x, derive_seed(seed, 1));
    const bool has_val = val_x.dim(0) > 0;
    const auto val_codes = encode_samples(bundle, has_val ? val_x : test_x, derive_seed(seed, 2));
    const auto& val_labels = has_val ? val_y : test_y;
    const auto test_codes = encode_samples(bundle, test_x, derive_seed(seed, 3));

    models::Net<float> probe;
    models::define_auxiliary(probe, bundle.arch);
    Rng rng(derive_seed(seed, 0x70726f6265ULL));
    probe.init_params(rng, bundle.arch.init_gain);
    auto opt = training::RmspropState<float>::like(probe, false);
    const training::RmspropConfig opt_cfg{.lr = 1e-3};

    const int64_t n = train_codes.dim(0);
    const int64_t batch = 128;
    std::vector<int64_t> order(static_cast<size_t>(n));
    double best_val = -1.0;
    int since_best = 0;
    models::Net<float> best = probe;

    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
        for (int64_t start = 0; start < n; start += batch) {
            const int64_t b = std::min(batch, n - start);
            Tensor<float> codes = Tensor<float>::uninit({b, bundle.arch.d_z});
            Tensor<float> labels({b, 1});
            for (int64_t i = 0; i < b; ++i) {
                const int64_t row = order[static_cast<size_t>(start + i)];
                std::memcpy(codes.ptr() + i * bundle.arch.d_z,
                            train_codes.ptr() + row * bundle.arch.d_z,
                            sizeof(float) * static_cast<size_t>(bundle.arch.d_z));
                labels[i] = static_cast<float>(train_y[static_cast<size_t>(row)]);
            }
            ad::Tape<float> tape;
            auto out = models::aux_graph(tape, probe, bundle.arch, tape.leaf(codes), ad::kOracle);
            auto loss = tape.bce_mean(labels, out);
            probe.zero_grads();
            tape.backward(loss, ad::kOracle);
            rmsprop_update(probe, opt, opt_cfg);
        }
        const double val_acc = probe_split_accuracy(probe, bundle.arch, val_codes, val_labels);
        if (val_acc > best_val) {
            best_val = val_acc;
            best = probe;
            since_best = 0;
        } else if (++since_best >= patience) {
            break;
        }
    }
    return probe_split_accuracy(best, bundle.arch, test_codes, test_y);
}

models::OracleClassifier train_oracle(const synthdata::Dataset& data, int epochs, double lr,
                                      uint64_t seed) {
    models::OracleClassifier oracle;
    oracle.kind = models::OracleClassifier::Kind::trained;
    oracle.arch.image_size = data.manifest.image_size;
    oracle.arch.channels = data.manifest.channels;
    oracle.arch.base_channels = 12;
    oracle.arch.d_z = 1;  // unused by the label path
    models::define_conv_trunk(oracle.net, oracle.arch, "trunk.");
    const int64_t flat = oracle.arch.flat_features();
    oracle.net.add("y.w", {flat, 1}, flat);
    oracle.net.add("y.b", {1}, 0);
    Rng rng(derive_seed(seed, 0x6f7261636cULL));
    oracle.net.init_params(rng, oracle.arch.init_gain);

    auto opt = training::RmspropState<float>::like(oracle.net, false);
    const training::RmspropConfig opt_cfg{.lr = lr};
    const auto [train_begin, train_end] = data.split_range(synthdata::Split::train);
    const int64_t n = train_end - train_begin;
    if (n == 0) throw ContractError("train_oracle: empty train split");
    const int64_t batch = 64;
    const int64_t stride = data.images.numel() / data.images.dim(0);
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = train_begin + i;
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
        for (int64_t start = 0; start < n; start += batch) {
            const int64_t b = std::min(batch, n - start);
            Tensor<float> x = Tensor<float>::uninit(
                {b, data.images.dim(1), data.images.dim(2), data.images.dim(3)});
            Tensor<float> y({b, 1});
            for (int64_t i = 0; i < b; ++i) {
                const int64_t row = order[static_cast<size_t>(start + i)];
                std::memcpy(x.ptr() + i * stride, data.images.ptr() + row * stride,
                            sizeof(float) * static_cast<size_t>(stride));
                y[i] = static_cast<float>(data.labels[static_cast<size_t>(row)]);
            }
            ad::Tape<float> tape;
            auto out =
                models::encoder_y_graph(tape, oracle.net, oracle.arch, tape.leaf(x), ad::kOracle);
            auto loss = tape.bce_mean(y, out);
            oracle.net.zero_grads();
            tape.backward(loss, ad::kOracle);
            rmsprop_update(oracle.net, opt, opt_cfg);
        }
    }
    oracle.is_trained = true;
    return oracle;
}

MetricsReport evaluate(models::NetworkBundle<float>& bundle, const synthdata::Dataset& data,
                       const models::OracleClassifier& oracle, uint64_t probe_seed) {
    const auto [test_x, test_y] = data.split_batch(synthdata::Split::test);
    if (test_x.dim(0) == 0) throw ContractError("evaluate: empty test split");
    const auto [attr1_x, attr1_y] = data.split_batch(synthdata::Split::test, 1);

    MetricsReport report;
    report.n_eval = test_x.dim(0);
    report.mse = reconstruction_mse(bundle, test_x);
    std::tie(report.c_attr0, report.c_attr1) = edit_success_rates(bundle, attr1_x, oracle);
    report.enc_cls_acc = encoder_accuracy(bundle, test_x, test_y);
    report.aux_probe_acc = probe_accuracy(bundle, data, probe_seed);
    return report;
}

std::vector<AblationResult> run_ablation(const synthdata::Dataset& data,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<uint64_t>& seeds,
                                         const models::OracleClassifier& oracle,
                                         const std::string& out_dir) {
    if (rows.empty() || seeds.empty())
        throw ContractError("run_ablation: needs at least one row and one seed");
    std::vector<AblationResult> results;
    for (const auto& row : rows) {
        AblationResult result;
        result.name = row.name;
        result.config = row.config;
        for (const uint64_t seed : seeds) {
            auto cfg = row.config;
            cfg.seed = seed;
            try {
                std::string run_dir;
                if (!out_dir.empty()) {
                    run_dir = out_dir + "/" + row.name + "_seed" + std::to_string(seed);
                    std::filesystem::create_directories(run_dir);
                }
                auto trained = training::train(data, cfg, run_dir);
                result.per_seed.push_back(
                    evaluate(trained.bundle, data, oracle, derive_seed(seed, 0xe7a1ULL)));
            } catch (const std::exception& e) {
                result.failed = true;
                result.error = e.what();
                break;
            }
        }
        if (!result.failed) result.mean = mean_report(result.per_seed);
        results.push_back(std::move(result));
    }
    return results;
}

std::string format_table(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-36s %8s %8s %8s %8s %8s\n", "Model", "MSE", "C_attr0",
                  "C_attr1", "Acc", "Probe");
    os << line;
    for (const auto& r : results) {
        if (r.failed) {
            std::snprintf(line, sizeof(line), "%-36s FAILED: %s\n", r.name.c_str(),
                          r.error.c_str());
            os << line;
            continue;
        }
        std::snprintf(line, sizeof(line), "%-36s %8.4f %7.1f%% %7.1f%% %7.1f%% %7.1f%%\n",
                      r.name.c_str(), r.mean.mse, 100.0 * r.mean.c_attr0, 100.0 * r.mean.c_attr1,
                      100.0 * r.mean.enc_cls_acc, 100.0 * r.mean.aux_probe_acc);
        os << line;
    }
    return os.str();
}

std::string format_records(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    os << "row\tseed\tstatus\tmse\tc_attr0\tc_attr1\tenc_cls_acc\taux_probe_acc\tn_eval\n";
    char num[64];
    for (const auto& r : results) {
        if (r.failed) {
            os << r.name << "\t-\tfailed\t-\t-\t-\t-\t-\t-\n";
            continue;
        }
        for (size_t i = 0; i < r.per_seed.size(); ++i) {
            const auto& m = r.per_seed[i];
            os << r.name << '\t' << i << "\tok";
            for (const double v : {m.mse, m.c_attr0, m.c_attr1, m.enc_cls_acc, m.aux_probe_acc}) {
                std::snprintf(num, sizeof(num), "\t%.9g", v);
                os << num;
            }
            os << '\t' << m.n_eval << '\n';
        }
    }
    return os.str();
}

void render_grid(const std::vector<Tensor<float>>& rows, const std::string& path) {
    if (rows.empty()) throw ContractError("render_grid: no rows");
    const int64_t n = rows.front().dim(0);
    const int64_t c = rows.front().dim(1);
    const int64_t h = rows.front().dim(2);
    const int64_t w = rows.front().dim(3);
    for (const auto& row : rows)
        if (row.ndim() != 4 || row.dim(0) != n || row.dim(1) != c || row.dim(2) != h ||
            row.dim(3) != w)
            throw ContractError("render_grid: rows must share one batch shape");
    constexpr int64_t kSep = 2;
    const int64_t rows_n = static_cast<int64_t>(rows.size());
    const int64_t out_h = rows_n * h + (rows_n - 1) * kSep;
    const int64_t out_w = n * w + (n - 1) * kSep;
    Tensor<float> canvas = Tensor<float>::full({c, out_h, out_w}, 0.5f);
    for (int64_t r = 0; r < rows_n; ++r)
        for (int64_t i = 0; i < n; ++i) {
            const int64_t y0 = r * (h + kSep);
            const int64_t x0 = i * (w + kSep);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x)
                        canvas.data[static_cast<size_t>((ch * out_h + y0 + y) * out_w + x0 + x)] =
                            rows[static_cast<size_t>(r)].at(i, ch, y, x);
        }
    image_io::write_png(path, canvas);
}

}  // namespace factorkit::evaluation
