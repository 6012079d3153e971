#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "factorkit/losses.hpp"
#include "factorkit/models.hpp"
#include "factorkit/optimizer.hpp"
#include "factorkit/rng.hpp"
#include "factorkit/synthdata.hpp"

namespace factorkit::training {

enum class Mode { ifcvae, naive_cvae };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

// Everything a run needs besides the dataset. Serializes to the flat
// key=value config format; the hash of that canonical text identifies the
// configuration in manifests and checkpoints.
struct ExperimentConfig {
    // loss weights
    double alpha = 0.005;  // KL
    double beta = 0.0;     // classification on the re-encoded reconstruction
    double rho = 0.1;      // classification on the input
    double delta = 0.005;  // adversarial
    // optimization
    double learning_rate = 2e-4;
    double aux_learning_rate = 0.0;  // 0 -> same as learning_rate
    double momentum = 0.5;           // discriminator optimizer only
    double rms_gamma = 0.9;
    double rms_eps = 1e-8;
    int epochs = 20;
    int batch_size = 64;
    // model
    int d_z = 16;
    int base_channels = 12;
    int residual_blocks = 0;
    bool share_trunk = true;
    int aux_hidden = 64;
    double init_gain = 2.0;
    double attr_input_scale = 0.1;
    double leak = 0.2;
    // run
    uint64_t seed = 1;
    Mode mode = Mode::ifcvae;
    bool class_rec_term = true;  // gate for the beta term
    bool enc_gan_term = true;    // gate for the adversarial term inside the encoder loss
    int aux_ratio = 1;           // auxiliary updates per training step
    int checkpoint_every = 5;    // epochs between checkpoints

    void validate() const;
    models::ArchSpec arch_for(int image_size, int channels) const;
    losses::Coeffs effective_coeffs() const;
    bool aux_in_encoder_loss() const { return mode == Mode::ifcvae; }

    std::string serialize() const;
    uint64_t hash() const;

    bool operator==(const ExperimentConfig&) const = default;
};

// One batch worth of training inputs. All randomness is drawn by the caller
// so that a step is a pure function of (networks, optimizer state, inputs).
struct StepInputs {
    Tensor<float> x;        // (B, C, H, W)
    Tensor<float> y;        // (B, 1) hard labels
    Tensor<float> eps;      // (B, d_z) reparameterization noise
    Tensor<float> z_prior;  // (B, d_z)
    Tensor<float> y_prior;  // (B, 1) attribute for prior decodes
};

struct Optimizers {
    RmspropState<float> encoder, decoder, discriminator, auxiliary;

    static Optimizers like(const models::NetworkBundle<float>& b, const ExperimentConfig& cfg);
};

// One pass of the training loop body: a single shared forward pass, one
// backward per network, then RMSprop updates in the order decoder, encoder,
// discriminator, auxiliary.
losses::LossReport train_step(models::NetworkBundle<float>& bundle, Optimizers& opt,
                              const StepInputs& in, const ExperimentConfig& cfg);

struct TrainResult {
    models::NetworkBundle<float> bundle;
    losses::LossReport final_val;
    double final_val_mse = 0.0;
    std::string metrics_text;                // full line-delimited metrics log
    std::vector<std::string> checkpoint_paths;
};

// Validation pass (no updates): posterior-mean encodings, epoch-tagged prior
// draws, plus the evaluation-side MSE.
std::pair<losses::LossReport, double> validation_metrics(models::NetworkBundle<float>& bundle,
                                                         const synthdata::Dataset& data,
                                                         const ExperimentConfig& cfg, int epoch);

// Runs the full loop over the dataset's train split. When out_dir is
// non-empty, metrics.log and periodic checkpoints are written there.
TrainResult train(const synthdata::Dataset& data, const ExperimentConfig& cfg,
                  const std::string& out_dir = "");

// Continues a checkpointed run; epochs k+1..N reproduce an uninterrupted run
// with the same seed exactly.
TrainResult resume(const synthdata::Dataset& data, const ExperimentConfig& cfg,
                   const std::string& checkpoint_path, const std::string& out_dir = "");

struct Checkpoint {
    uint64_t config_hash = 0;
    std::string config_text;  // canonical serialization of the run's config
    int epoch = 0;            // completed epochs
    models::NetworkBundle<float> bundle;
    Optimizers opt;
    Rng run_rng;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);

// Loads without verification; the embedded config text describes the run.
Checkpoint load_checkpoint_raw(const std::string& path);

// Refuses to load under a configuration whose hash differs from the saved one.
Checkpoint load_checkpoint(const std::string& path, const ExperimentConfig& cfg);

}  // namespace factorkit::training
