#include "factorkit/training.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "factorkit/binio.hpp"

namespace factorkit::training {

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'K', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string step_line(int64_t step, int epoch, const losses::LossReport& r) {
    std::ostringstream os;
    os << "step=" << step << " epoch=" << epoch << " rec=" << format_double(r.rec)
       << " kl=" << format_double(r.kl) << " class_in=" << format_double(r.class_in)
       << " class_rec=" << format_double(r.class_rec) << " gan=" << format_double(r.gan)
       << " aux=" << format_double(r.aux) << " enc_total=" << format_double(r.enc_total)
       << " dec_total=" << format_double(r.dec_total);
    return os.str();
}

std::string val_line(int epoch, const losses::LossReport& r, double mse) {
    std::ostringstream os;
    os << "val epoch=" << epoch << " rec=" << format_double(r.rec) << " kl=" << format_double(r.kl)
       << " class_in=" << format_double(r.class_in)
       << " class_rec=" << format_double(r.class_rec) << " gan=" << format_double(r.gan)
       << " aux=" << format_double(r.aux) << " enc_total=" << format_double(r.enc_total)
       << " dec_total=" << format_double(r.dec_total) << " mse=" << format_double(mse);
    return os.str();
}

// All loss nodes of one shared forward pass.
struct StepGraph {
    models::EncoderVars<float> enc;
    ad::Var<float> x_hat;
    ad::Var<float> rec, kl, class_in, class_rec, gan, aux;
    ad::Var<float> enc_total, dec_total;
    losses::LossReport report;
};

StepGraph build_step_graph(ad::Tape<float>& tape, models::NetworkBundle<float>& bundle,
                           const StepInputs& in, const ExperimentConfig& cfg) {
    const auto& arch = bundle.arch;
    const int64_t batch = in.x.dim(0);
    require_shape(in.eps, {batch, arch.d_z}, "train_step eps");
    require_shape(in.z_prior, {batch, arch.d_z}, "train_step z_prior");
    require_shape(in.y_prior, {batch, 1}, "train_step y_prior");
    require_shape(in.y, {batch, 1}, "train_step labels");

    StepGraph g;
    auto x = tape.leaf(in.x);
    auto eps = tape.leaf(in.eps);

    g.enc = models::encoder_graph(tape, bundle.encoder, arch, x, eps);
    auto zy = tape.concat_cols(g.enc.z, g.enc.y);
    g.x_hat = models::decoder_graph(tape, bundle.decoder, arch, zy);
    auto y_rec = models::encoder_y_graph(tape, bundle.encoder, arch, g.x_hat);

    // Prior decode for the third adversarial term.
    Tensor<float> zp_cat({batch, arch.d_z + 1});
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t j = 0; j < arch.d_z; ++j) zp_cat.at(b, j) = in.z_prior.at(b, j);
        zp_cat.at(b, arch.d_z) = in.y_prior[b];
    }
    auto x_prior = models::decoder_graph(tape, bundle.decoder, arch, tape.leaf(zp_cat));

    auto c_real = models::discriminator_graph(tape, bundle.discriminator, arch, x);
    auto c_rec = models::discriminator_graph(tape, bundle.discriminator, arch, g.x_hat);
    auto c_prior = models::discriminator_graph(tape, bundle.discriminator, arch, x_prior);
    auto y_aux = models::aux_graph(tape, bundle.auxiliary, arch, g.enc.z);

    g.rec = tape.bce_mean(in.x, g.x_hat);
    g.kl = tape.kl_gauss(g.enc.mu, g.enc.log_var);
    g.class_in = tape.bce_mean(in.y, g.enc.y);
    g.class_rec = tape.bce_mean(in.y, y_rec);
    const auto ones = Tensor<float>::full({batch, 1}, 1.0f);
    const auto zeros = Tensor<float>::zeros({batch, 1});
    g.gan = tape.lincomb({{tape.bce_mean(ones, c_real), 1.0 / 3.0},
                          {tape.bce_mean(zeros, c_rec), 1.0 / 3.0},
                          {tape.bce_mean(zeros, c_prior), 1.0 / 3.0}});
    g.aux = tape.bce_mean(in.y, y_aux);

    // Zero-coefficient terms are logged but kept out of the graph composites,
    // so they cost no backward work.
    const losses::Coeffs c = cfg.effective_coeffs();
    std::vector<std::pair<ad::Var<float>, double>> dec_terms = {{g.rec, 1.0}};
    if (c.beta != 0.0) dec_terms.push_back({g.class_rec, c.beta});
    if (c.delta != 0.0) dec_terms.push_back({g.gan, -c.delta});
    g.dec_total = tape.lincomb(dec_terms);
    std::vector<std::pair<ad::Var<float>, double>> enc_terms = {{g.rec, 1.0}};
    if (c.alpha != 0.0) enc_terms.push_back({g.kl, c.alpha});
    if (c.beta != 0.0) enc_terms.push_back({g.class_rec, c.beta});
    if (c.rho != 0.0) enc_terms.push_back({g.class_in, c.rho});
    if (cfg.enc_gan_term && c.delta != 0.0) enc_terms.push_back({g.gan, -c.delta});
    if (cfg.aux_in_encoder_loss()) enc_terms.push_back({g.aux, -1.0});
    g.enc_total = tape.lincomb(enc_terms);

    auto scalar_of = [&](ad::Var<float> v) { return static_cast<double>(tape.val(v)[0]); };
    g.report.rec = scalar_of(g.rec);
    g.report.kl = scalar_of(g.kl);
    g.report.class_in = scalar_of(g.class_in);
    g.report.class_rec = scalar_of(g.class_rec);
    g.report.gan = scalar_of(g.gan);
    g.report.aux = scalar_of(g.aux);
    g.report.dec_total = losses::decoder_loss(g.report.rec, g.report.class_rec, g.report.gan, c);
    g.report.enc_total =
        losses::encoder_loss(g.report.rec, g.report.kl, g.report.class_rec, g.report.class_in,
                             g.report.gan, g.report.aux, c, cfg.aux_in_encoder_loss(),
                             cfg.enc_gan_term);
    return g;
}

void require_finite(const losses::LossReport& r) {
    const std::pair<const char*, double> fields[] = {
        {"rec", r.rec},   {"kl", r.kl},   {"class_in", r.class_in}, {"class_rec", r.class_rec},
        {"gan", r.gan},   {"aux", r.aux}, {"enc_total", r.enc_total}, {"dec_total", r.dec_total}};
    for (const auto& [name, v] : fields)
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite loss component ") + name);
}

void write_optimizer(std::ostream& os, const RmspropState<float>& st) {
    binio::write_u64(os, static_cast<uint64_t>(st.step));
    binio::write_u32(os, static_cast<uint32_t>(st.acc.size()));
    for (const auto& t : st.acc)
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
    binio::write_u32(os, static_cast<uint32_t>(st.mom.size()));
    for (const auto& t : st.mom)
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
}

void read_optimizer(std::istream& is, RmspropState<float>& st, const models::Net<float>& net) {
    st.step = static_cast<int64_t>(binio::read_u64(is, "optimizer step"));
    const uint32_t n_acc = binio::read_u32(is, "optimizer acc count");
    if (n_acc != net.values.size()) throw IoError("checkpoint: optimizer accumulator mismatch");
    st.acc.clear();
    for (const auto& v : net.values) {
        Tensor<float> t(v.shape);
        is.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
        if (!is) throw IoError("checkpoint: truncated optimizer state");
        st.acc.push_back(std::move(t));
    }
    const uint32_t n_mom = binio::read_u32(is, "optimizer momentum count");
    st.mom.clear();
    if (n_mom != 0 && n_mom != net.values.size())
        throw IoError("checkpoint: optimizer momentum mismatch");
    for (uint32_t i = 0; i < n_mom; ++i) {
        Tensor<float> t(net.values[i].shape);
        is.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
        if (!is) throw IoError("checkpoint: truncated momentum state");
        st.mom.push_back(std::move(t));
    }
}

}  // namespace

std::string mode_name(Mode m) { return m == Mode::ifcvae ? "ifcvae" : "naive-cvae"; }

Mode parse_mode(const std::string& name) {
    if (name == "ifcvae") return Mode::ifcvae;
    if (name == "naive-cvae" || name == "naive") return Mode::naive_cvae;
    throw ConfigError("unknown mode '" + name + "' (expected ifcvae or naive-cvae)");
}

void ExperimentConfig::validate() const {
    losses::require_nonnegative(effective_coeffs());
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be finite and >= 0");
    if (!(aux_learning_rate >= 0.0) || !std::isfinite(aux_learning_rate))
        throw ConfigError("aux_learning_rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (!(rms_gamma > 0.0 && rms_gamma < 1.0)) throw ConfigError("rms_gamma must be in (0,1)");
    if (!(rms_eps > 0.0)) throw ConfigError("rms_eps must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (aux_ratio < 1) throw ConfigError("aux_ratio must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    models::ArchSpec probe = arch_for(32, 3);
    probe.validate();
}

models::ArchSpec ExperimentConfig::arch_for(int image_size, int channels) const {
    models::ArchSpec a;
    a.image_size = image_size;
    a.channels = channels;
    a.d_z = d_z;
    a.base_channels = base_channels;
    a.residual_blocks = residual_blocks;
    a.share_trunk = share_trunk;
    a.aux_hidden = aux_hidden;
    a.init_gain = init_gain;
    a.attr_input_scale = attr_input_scale;
    a.leak = leak;
    return a;
}

losses::Coeffs ExperimentConfig::effective_coeffs() const {
    return losses::Coeffs{.alpha = alpha,
                          .beta = class_rec_term ? beta : 0.0,
                          .rho = rho,
                          .delta = delta};
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os << "alpha = " << format_double(alpha) << "\n"
       << "beta = " << format_double(beta) << "\n"
       << "rho = " << format_double(rho) << "\n"
       << "delta = " << format_double(delta) << "\n"
       << "learning_rate = " << format_double(learning_rate) << "\n"
       << "aux_learning_rate = " << format_double(aux_learning_rate) << "\n"
       << "momentum = " << format_double(momentum) << "\n"
       << "rms_gamma = " << format_double(rms_gamma) << "\n"
       << "rms_eps = " << format_double(rms_eps) << "\n"
       << "epochs = " << epochs << "\n"
       << "batch_size = " << batch_size << "\n"
       << "d_z = " << d_z << "\n"
       << "base_channels = " << base_channels << "\n"
       << "residual_blocks = " << residual_blocks << "\n"
       << "share_trunk = " << (share_trunk ? "true" : "false") << "\n"
       << "aux_hidden = " << aux_hidden << "\n"
       << "init_gain = " << format_double(init_gain) << "\n"
       << "attr_input_scale = " << format_double(attr_input_scale) << "\n"
       << "leak = " << format_double(leak) << "\n"
       << "seed = " << seed << "\n"
       << "mode = " << mode_name(mode) << "\n"
       << "class_rec_term = " << (class_rec_term ? "true" : "false") << "\n"
       << "enc_gan_term = " << (enc_gan_term ? "true" : "false") << "\n"
       << "aux_ratio = " << aux_ratio << "\n"
       << "checkpoint_every = " << checkpoint_every << "\n";
    return os.str();
}

uint64_t ExperimentConfig::hash() const { return binio::fnv1a(serialize()); }

Optimizers Optimizers::like(const models::NetworkBundle<float>& b, const ExperimentConfig& cfg) {
    Optimizers o;
    o.encoder = RmspropState<float>::like(b.encoder, false);
    o.decoder = RmspropState<float>::like(b.decoder, false);
    o.discriminator = RmspropState<float>::like(b.discriminator, cfg.momentum != 0.0);
    o.auxiliary = RmspropState<float>::like(b.auxiliary, false);
    return o;
}

losses::LossReport train_step(models::NetworkBundle<float>& bundle, Optimizers& opt,
                              const StepInputs& in, const ExperimentConfig& cfg) {
    ad::Tape<float> tape;
    StepGraph g = build_step_graph(tape, bundle, in, cfg);
    require_finite(g.report);

    bundle.encoder.zero_grads();
    bundle.decoder.zero_grads();
    bundle.discriminator.zero_grads();
    bundle.auxiliary.zero_grads();
    // All four gradients come from the same forward pass, before any update.
    // The decoder-relevant terms of the encoder total are exactly the decoder
    // loss (the additional terms carry no decoder dependence), so one sweep
    // yields both gradients whenever the encoder keeps its adversarial term.
    if (cfg.enc_gan_term) {
        tape.backward(g.enc_total, ad::kEncoder | ad::kDecoder);
    } else {
        tape.backward(g.dec_total, ad::kDecoder);
        tape.backward(g.enc_total, ad::kEncoder);
    }
    tape.backward(g.gan, ad::kDiscriminator);
    tape.backward(g.aux, ad::kAuxiliary);

    const RmspropConfig base{.lr = cfg.learning_rate, .gamma = cfg.rms_gamma, .eps = cfg.rms_eps};
    RmspropConfig disc = base;
    disc.momentum = cfg.momentum;
    RmspropConfig aux_opt = base;
    if (cfg.aux_learning_rate > 0.0) aux_opt.lr = cfg.aux_learning_rate;
    rmsprop_update(bundle.decoder, opt.decoder, base);
    rmsprop_update(bundle.encoder, opt.encoder, base);
    rmsprop_update(bundle.discriminator, opt.discriminator, disc);
    rmsprop_update(bundle.auxiliary, opt.auxiliary, aux_opt);

    // Optional extra probe updates on the same frozen identity codes.
    if (cfg.aux_ratio > 1) {
        const Tensor<float> z_frozen = tape.val(g.enc.z);
        for (int extra = 1; extra < cfg.aux_ratio; ++extra) {
            ad::Tape<float> aux_tape;
            auto probs = models::aux_graph(aux_tape, bundle.auxiliary, bundle.arch,
                                           aux_tape.leaf(z_frozen));
            auto loss = aux_tape.bce_mean(in.y, probs);
            bundle.auxiliary.zero_grads();
            aux_tape.backward(loss, ad::kAuxiliary);
            rmsprop_update(bundle.auxiliary, opt.auxiliary, aux_opt);
        }
    }
    return g.report;
}

std::pair<losses::LossReport, double> validation_metrics(models::NetworkBundle<float>& bundle,
                                                         const synthdata::Dataset& data,
                                                         const ExperimentConfig& cfg, int epoch) {
    const auto [begin, end] = data.split_range(synthdata::Split::val);
    losses::LossReport total;
    double mse = 0.0;
    const int64_t n = end - begin;
    if (n == 0) return {total, 0.0};

    Rng prior_rng(derive_seed(cfg.seed ^ 0x76616cULL, static_cast<uint64_t>(epoch)));
    const int64_t chunk = 256;
    const int64_t stride = data.images.dim(1) * data.images.dim(2) * data.images.dim(3);
    int64_t done = 0;
    while (done < n) {
        const int64_t b = std::min(chunk, n - done);
        StepInputs in;
        in.x = Tensor<float>({b, data.images.dim(1), data.images.dim(2), data.images.dim(3)});
        in.y = Tensor<float>({b, 1});
        std::memcpy(in.x.ptr(), data.images.ptr() + (begin + done) * stride,
                    sizeof(float) * static_cast<size_t>(b * stride));
        for (int64_t i = 0; i < b; ++i)
            in.y[i] = static_cast<float>(data.labels[static_cast<size_t>(begin + done + i)]);
        in.eps = Tensor<float>::zeros({b, bundle.arch.d_z});
        in.z_prior = Tensor<float>({b, bundle.arch.d_z});
        for (auto& v : in.z_prior.data) v = static_cast<float>(prior_rng.normal());
        in.y_prior = Tensor<float>({b, 1});
        for (auto& v : in.y_prior.data) v = prior_rng.bernoulli() ? 1.0f : 0.0f;

        ad::Tape<float> tape;
        const StepGraph g = build_step_graph(tape, bundle, in, cfg);
        const double w = static_cast<double>(b) / static_cast<double>(n);
        total.rec += w * g.report.rec;
        total.kl += w * g.report.kl;
        total.class_in += w * g.report.class_in;
        total.class_rec += w * g.report.class_rec;
        total.gan += w * g.report.gan;
        total.aux += w * g.report.aux;
        const auto& xh = tape.val(g.x_hat);
        double sq = 0.0;
        for (int64_t i = 0; i < xh.numel(); ++i) {
            const double d = static_cast<double>(xh[i]) - static_cast<double>(in.x[i]);
            sq += d * d;
        }
        mse += sq / static_cast<double>(stride) / static_cast<double>(n);
        done += b;
    }
    const auto c = cfg.effective_coeffs();
    total.dec_total = losses::decoder_loss(total.rec, total.class_rec, total.gan, c);
    total.enc_total =
        losses::encoder_loss(total.rec, total.kl, total.class_rec, total.class_in, total.gan,
                             total.aux, c, cfg.aux_in_encoder_loss(), cfg.enc_gan_term);
    return {total, mse};
}

namespace {

TrainResult run_loop(const synthdata::Dataset& data, const ExperimentConfig& cfg,
                     models::NetworkBundle<float> bundle, Optimizers opt, Rng run_rng,
                     int start_epoch, const std::string& out_dir) {
    const auto [train_begin, train_end] = data.split_range(synthdata::Split::train);
    const int64_t n_train = train_end - train_begin;
    if (n_train < 1) throw ContractError("train: dataset has an empty train split");

    TrainResult result;
    std::ofstream metrics_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_file.open(out_dir + "/metrics.log", start_epoch == 0 ? std::ios::trunc
                                                                     : std::ios::app);
        if (!metrics_file) throw IoError("train: cannot open metrics log in " + out_dir);
    }
    auto emit = [&](const std::string& line) {
        result.metrics_text += line;
        result.metrics_text += '\n';
        if (metrics_file.is_open()) metrics_file << line << '\n';
    };

    auto write_ckpt = [&](int completed_epochs) {
        if (out_dir.empty()) return;
        Checkpoint ck{cfg.hash(), cfg.serialize(), completed_epochs, bundle, opt, run_rng};
        ck.bundle.trained = true;
        const std::string path =
            out_dir + "/ckpt_epoch_" + std::to_string(completed_epochs) + ".fkck";
        save_checkpoint(ck, path);
        result.checkpoint_paths.push_back(path);
    };

    const int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    int64_t step = static_cast<int64_t>(start_epoch) * steps_per_epoch;
    const int64_t stride = data.images.dim(1) * data.images.dim(2) * data.images.dim(3);

    std::vector<int64_t> order(static_cast<size_t>(n_train));
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = train_begin + i;
        for (int64_t i = n_train - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(run_rng.below(static_cast<uint64_t>(i + 1)))]);

        for (int64_t start = 0; start < n_train; start += cfg.batch_size) {
            const int64_t b = std::min<int64_t>(cfg.batch_size, n_train - start);
            StepInputs in;
            in.x = Tensor<float>({b, data.images.dim(1), data.images.dim(2), data.images.dim(3)});
            in.y = Tensor<float>({b, 1});
            for (int64_t i = 0; i < b; ++i) {
                const int64_t row = order[static_cast<size_t>(start + i)];
                std::memcpy(in.x.ptr() + i * stride, data.images.ptr() + row * stride,
                            sizeof(float) * static_cast<size_t>(stride));
                in.y[i] = static_cast<float>(data.labels[static_cast<size_t>(row)]);
            }
            in.eps = Tensor<float>({b, cfg.d_z});
            for (auto& v : in.eps.data) v = static_cast<float>(run_rng.normal());
            in.z_prior = Tensor<float>({b, cfg.d_z});
            for (auto& v : in.z_prior.data) v = static_cast<float>(run_rng.normal());
            in.y_prior = Tensor<float>({b, 1});
            for (auto& v : in.y_prior.data) v = run_rng.bernoulli() ? 1.0f : 0.0f;

            losses::LossReport report;
            try {
                report = train_step(bundle, opt, in, cfg);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(step) + ": " +
                                   e.what());
            }
            emit(step_line(step, epoch, report));
            ++step;
        }

        const auto [val_report, val_mse] = validation_metrics(bundle, data, cfg, epoch);
        emit(val_line(epoch, val_report, val_mse));
        result.final_val = val_report;
        result.final_val_mse = val_mse;

        if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
            write_ckpt(epoch + 1);
    }
    write_ckpt(cfg.epochs);

    if (cfg.epochs == start_epoch) {
        const auto [val_report, val_mse] = validation_metrics(bundle, data, cfg, cfg.epochs);
        result.final_val = val_report;
        result.final_val_mse = val_mse;
    }

    bundle.trained = true;
    result.bundle = std::move(bundle);
    return result;
}

}  // namespace

TrainResult train(const synthdata::Dataset& data, const ExperimentConfig& cfg,
                  const std::string& out_dir) {
    cfg.validate();
    const auto arch = cfg.arch_for(data.manifest.image_size, data.manifest.channels);
    arch.validate();
    auto bundle = models::init_bundle<float>(arch, cfg.seed);
    auto opt = Optimizers::like(bundle, cfg);
    Rng run_rng(derive_seed(cfg.seed, 0x747261696eULL));
    return run_loop(data, cfg, std::move(bundle), std::move(opt), run_rng, 0, out_dir);
}

TrainResult resume(const synthdata::Dataset& data, const ExperimentConfig& cfg,
                   const std::string& checkpoint_path, const std::string& out_dir) {
    cfg.validate();
    Checkpoint ck = load_checkpoint(checkpoint_path, cfg);
    if (ck.epoch > cfg.epochs)
        throw ConfigError("resume: checkpoint is beyond the configured epoch count");
    return run_loop(data, cfg, std::move(ck.bundle), std::move(ck.opt), ck.run_rng, ck.epoch,
                    out_dir);
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("checkpoint: cannot open " + tmp);
        os.write(kCheckpointMagic, 4);
        binio::write_u32(os, kCheckpointVersion);
        binio::write_u64(os, ck.config_hash);
        binio::write_str(os, ck.config_text);
        binio::write_u32(os, static_cast<uint32_t>(ck.epoch));
        models::save_bundle(ck.bundle, os);
        write_optimizer(os, ck.opt.decoder);
        write_optimizer(os, ck.opt.encoder);
        write_optimizer(os, ck.opt.discriminator);
        write_optimizer(os, ck.opt.auxiliary);
        ck.run_rng.save(os);
        if (!os) {
            os.close();
            std::filesystem::remove(tmp);
            throw IoError("checkpoint: write failed for " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("checkpoint: cannot move into place: " + path + ": " + ec.message());
    }
}

Checkpoint load_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const uint32_t version = binio::read_u32(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config_hash = binio::read_u64(is, "config hash");
    ck.config_text = binio::read_str(is, "config text");
    ck.epoch = static_cast<int>(binio::read_u32(is, "epoch"));
    ck.bundle = models::load_bundle(is);
    ck.bundle.trained = true;
    read_optimizer(is, ck.opt.decoder, ck.bundle.decoder);
    read_optimizer(is, ck.opt.encoder, ck.bundle.encoder);
    read_optimizer(is, ck.opt.discriminator, ck.bundle.discriminator);
    read_optimizer(is, ck.opt.auxiliary, ck.bundle.auxiliary);
    ck.run_rng.load(is);
    if (!is) throw IoError("checkpoint: truncated RNG state in " + path);
    return ck;
}

Checkpoint load_checkpoint(const std::string& path, const ExperimentConfig& cfg) {
    Checkpoint ck = load_checkpoint_raw(path);
    if (ck.config_hash != cfg.hash())
        throw ConfigError("checkpoint: config hash mismatch (refusing to resume with a different "
                          "configuration)");
    return ck;
}

}  // namespace factorkit::training
