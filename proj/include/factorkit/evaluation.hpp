#pragma once

#include <functional>
#include <string>
#include <vector>

#include "factorkit/models.hpp"
#include "factorkit/synthdata.hpp"
#include "factorkit/training.hpp"

namespace factorkit::evaluation {

struct MetricsReport {
    double mse = 0.0;            // pixel MSE of posterior-mean reconstructions
    double c_attr0 = 0.0;        // oracle-negative fraction after editing to 0
    double c_attr1 = 0.0;        // oracle-positive fraction after editing to 1
    double enc_cls_acc = 0.0;    // label-head accuracy on held-out data
    double aux_probe_acc = 0.0;  // fresh-probe accuracy on frozen identity codes
    int64_t n_eval = 0;
};

// Posterior means / label probabilities for a whole image set, batched.
Tensor<float> encode_means(models::NetworkBundle<float>& bundle, const Tensor<float>& images);
Tensor<float> encode_labels(models::NetworkBundle<float>& bundle, const Tensor<float>& images);

// Posterior samples mu + sigma * eps with seeded noise: the identity codes as
// the training loop and the adversarial probe actually see them.
Tensor<float> encode_samples(models::NetworkBundle<float>& bundle, const Tensor<float>& images,
                             uint64_t noise_seed);

// Switch-flipping edit: decode the posterior-mean identity code with the
// attribute unit forced to 0 or 1. Requires a trained bundle.
Tensor<float> edit_attribute(models::NetworkBundle<float>& bundle, const Tensor<float>& x,
                             int target);

// Edit-success pair over attribute-present source images: the fraction the
// oracle scores as negative after editing to 0, and positive after editing
// to 1. Both rates come from the same source images.
using Classifier = std::function<std::vector<uint8_t>(const Tensor<float>&)>;

std::pair<double, double> edit_success_rates(models::NetworkBundle<float>& bundle,
                                             const Tensor<float>& test_x_attr1,
                                             const Classifier& classify);

std::pair<double, double> edit_success_rates(models::NetworkBundle<float>& bundle,
                                             const Tensor<float>& test_x_attr1,
                                             const models::OracleClassifier& oracle);

// Pixel-mean squared error between two equally shaped image batches.
double mse(const Tensor<float>& a, const Tensor<float>& b);

double reconstruction_mse(models::NetworkBundle<float>& bundle, const Tensor<float>& images);

double encoder_accuracy(models::NetworkBundle<float>& bundle, const Tensor<float>& images,
                        const std::vector<uint8_t>& labels);

// Trains a fresh probe to convergence on frozen posterior means (early
// stopping on validation accuracy, patience 5) and reports test accuracy.
double probe_accuracy(models::NetworkBundle<float>& bundle, const synthdata::Dataset& data,
                      uint64_t seed, int max_epochs = 80, int patience = 5);

// Conv classifier trained on real data only (same trunk shape as the
// encoder's label path).
models::OracleClassifier train_oracle(const synthdata::Dataset& data, int epochs = 2,
                                      double lr = 1e-3, uint64_t seed = 99);

MetricsReport evaluate(models::NetworkBundle<float>& bundle, const synthdata::Dataset& data,
                       const models::OracleClassifier& oracle, uint64_t probe_seed = 7);

// --- ablation grid -----------------------------------------------------------

struct AblationRow {
    std::string name;
    training::ExperimentConfig config;
};

struct AblationResult {
    std::string name;
    training::ExperimentConfig config;
    std::vector<MetricsReport> per_seed;
    MetricsReport mean;
    bool failed = false;
    std::string error;
};

// Trains and evaluates every row once per seed (the row's own seed field is
// replaced); a row whose training aborts is marked failed and the grid
// continues. Reports per row are averaged over seeds.
std::vector<AblationResult> run_ablation(const synthdata::Dataset& data,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<uint64_t>& seeds,
                                         const models::OracleClassifier& oracle,
                                         const std::string& out_dir = "");

// Human-readable table in the MSE / C0 / C1 / Acc column layout.
std::string format_table(const std::vector<AblationResult>& results);

// Tab-separated raw records, one line per (row, seed).
std::string format_records(const std::vector<AblationResult>& results);

// Tiles image-batch rows into one image with 2-px separators and writes a
// lossless PNG.
void render_grid(const std::vector<Tensor<float>>& rows, const std::string& path);

}  // namespace factorkit::evaluation
