// Acceptance suite: one case per criterion, each printing a PASS/FAIL line
// with the measured values. Training runs are shared across criteria.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "factorkit/config.hpp"
#include "factorkit/image_io.hpp"
#include "factorkit/evaluation.hpp"
#include "fd_check.hpp"

using namespace factorkit;
namespace ev = factorkit::evaluation;

namespace {

// Desk-scale acceptance configurations (see configs/ for the CLI versions).
// The ablation grid runs inside the window where the no-adversary baseline
// still exhibits its failure signature, with a fast-tracking auxiliary; the
// reconstruction-fidelity runs use the shipped full-model defaults.
constexpr int kGridEpochs = 10;
constexpr int kContrastEpochs = 16;
constexpr double kLn2 = 0.6931471805599453;

training::ExperimentConfig accept_config() {
    training::ExperimentConfig cfg;
    cfg.alpha = 0.005;
    cfg.beta = 0.0;
    cfg.rho = 0.1;
    cfg.delta = 0.005;
    cfg.momentum = 0.5;
    cfg.base_channels = 12;
    cfg.aux_hidden = 128;
    cfg.aux_ratio = 10;
    cfg.checkpoint_every = 1000;  // no periodic checkpoints during acceptance
    return cfg;
}

// Grid config: matches configs/table1.cfg.
training::ExperimentConfig grid_config() {
    auto cfg = accept_config();
    cfg.epochs = kGridEpochs;
    cfg.d_z = 16;
    cfg.aux_learning_rate = 1e-3;
    return cfg;
}

// Full-model config: matches configs/default.cfg.
training::ExperimentConfig full_config() {
    auto cfg = accept_config();
    cfg.epochs = kContrastEpochs;
    cfg.d_z = 24;
    return cfg;
}

void announce(int criterion, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] acceptance criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", criterion,
                name, detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

// Trained runs shared by criteria 3-7, built on first use.
struct World {
    synthdata::Dataset data = synthdata::generate_dataset(12500, 1, {}, 32, 3);
    models::OracleClassifier oracle;  // exact pixel rule

    std::vector<ev::AblationResult> grid_main;   // +-aux rows, 3 seeds each
    std::vector<ev::AblationResult> grid_extra;  // +-class_rec rows, 1 seed
    ev::MetricsReport low_alpha;                 // alpha = 0.005, long run
    ev::MetricsReport high_alpha;                // alpha = 0.1, long run
    std::unique_ptr<models::NetworkBundle<float>> full_bundle;  // the low-alpha model
    bool grids_done = false;
    bool contrast_done = false;

    static World& get() {
        static World world;
        return world;
    }

    void ensure_grid() {
        if (grids_done) return;
        auto base = grid_config();
        std::vector<ev::AblationRow> main_rows;
        auto with_aux = base;
        main_rows.push_back({"with_aux", with_aux});
        auto no_aux = base;
        no_aux.mode = training::Mode::naive_cvae;
        main_rows.push_back({"no_aux", no_aux});
        grid_main = ev::run_ablation(data, main_rows, {1, 2, 3}, oracle);

        std::vector<ev::AblationRow> extra_rows;
        auto with_classrec = base;
        with_classrec.beta = 1.0;
        extra_rows.push_back({"with_aux_class_rec", with_classrec});
        auto naive_classrec = no_aux;
        naive_classrec.beta = 1.0;
        extra_rows.push_back({"no_aux_class_rec", naive_classrec});
        grid_extra = ev::run_ablation(data, extra_rows, {1}, oracle);

        std::printf("\n%s%s\n", ev::format_table(grid_main).c_str(),
                    ev::format_table(grid_extra).c_str());
        for (const auto& result : {grid_main, grid_extra})
            for (const auto& row : result) REQUIRE(!row.failed);
        grids_done = true;
    }

    void ensure_contrast() {
        if (contrast_done) return;
        auto cfg = full_config();
        cfg.seed = 1;
        auto low = training::train(data, cfg);
        low_alpha = ev::evaluate(low.bundle, data, oracle, 7);
        full_bundle = std::make_unique<models::NetworkBundle<float>>(std::move(low.bundle));
        cfg.alpha = 0.1;
        auto high = training::train(data, cfg);
        high_alpha = ev::evaluate(high.bundle, data, oracle, 7);
        contrast_done = true;
    }

    const ev::AblationResult& row_with_aux() { return grid_main[0]; }
    const ev::AblationResult& row_no_aux() { return grid_main[1]; }
};

// Monte-Carlo KL oracle, independent of the analytic formula.
double kl_monte_carlo(const Tensor<double>& mu, const Tensor<double>& log_var, int64_t draws,
                      uint64_t seed) {
    Rng rng(seed);
    const int64_t batch = mu.dim(0), dims = mu.dim(1);
    double total = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
        double acc = 0.0;
        for (int64_t s = 0; s < draws; ++s)
            for (int64_t d = 0; d < dims; ++d) {
                const double m = mu.at(b, d);
                const double lv = log_var.at(b, d);
                const double sigma = std::exp(0.5 * lv);
                const double z = m + sigma * rng.normal();
                acc += -0.5 * ((z - m) * (z - m) / (sigma * sigma) + lv) + 0.5 * z * z;
            }
        total += acc / static_cast<double>(draws);
    }
    return total / static_cast<double>(batch);
}

}  // namespace

TEST_CASE("criterion 1: analytic-loss oracle equivalence") {
    Rng rng(2024);
    double worst = 0.0;
    for (int draw = 0; draw < 20; ++draw) {
        Tensor<double> mu({2, 3});
        Tensor<double> lv({2, 3});
        for (auto& v : mu.data) v = rng.normal();
        for (auto& v : lv.data) v = 0.8 * rng.normal();
        const double analytic = losses::kl_divergence(mu, lv);
        const double mc = kl_monte_carlo(mu, lv, 1000000, 3000 + static_cast<uint64_t>(draw));
        worst = std::max(worst, std::abs(analytic - mc));
    }

    Tensor<double> t({2}, {1.0, 0.0});
    Tensor<double> p({2}, {0.5, 0.5});
    const double bce_err = std::abs(losses::bce(t, p) - kLn2);
    const auto half = Tensor<double>::full({4}, 0.5);
    const double gan_err = std::abs(losses::gan_loss(half, half, half) - kLn2);

    const bool pass = worst < 1e-2 && bce_err < 1e-9 && gan_err < 1e-9;
    announce(1, "analytic-loss oracle equivalence", pass,
             fmt("KL vs 1e6-sample MC worst |diff| = %.2e (< 1e-2); bce ln2 err = %.1e, "
                 "gan ln2 err = %.1e (< 1e-9)",
                 worst, bce_err, gan_err));
    CHECK(pass);
}

TEST_CASE("criterion 2: gradient correctness on the miniature architecture") {
    models::ArchSpec arch;
    arch.image_size = 8;
    arch.channels = 3;
    arch.d_z = 4;
    arch.base_channels = 4;
    arch.aux_hidden = 16;
    auto bundle = models::init_bundle<double>(arch, 21);
    const auto mini = synthdata::generate_dataset(8, 17, {}, 8, 3);

    const int64_t batch = 2;
    Tensor<double> x = Tensor<double>::uninit({batch, 3, 8, 8});
    Tensor<double> y({batch, 1});
    for (int64_t i = 0; i < batch; ++i) {
        for (int64_t j = 0; j < 3 * 64; ++j)
            x[i * 3 * 64 + j] = static_cast<double>(mini.images[i * 3 * 64 + j]);
        y[i] = mini.labels[static_cast<size_t>(i)];
    }
    Rng rng(5);
    Tensor<double> eps({batch, 4}), zp({batch, 5});
    for (auto& v : eps.data) v = rng.normal();
    for (auto& v : zp.data) v = rng.normal();
    const losses::Coeffs c{.alpha = 0.2, .beta = 0.5, .rho = 0.1, .delta = 0.1};

    enum Loss { kRec, kKl, kClass, kClassRec, kGan, kAux, kEnc, kDec, kLossCount };
    static const char* names[kLossCount] = {"L_rec",  "L_KL",  "L_class", "L_class_rec",
                                            "L_gan",  "L_aux", "L_enc",   "L_dec"};

    auto build = [&](ad::Tape<double>& tape, Loss which) {
        auto vx = tape.leaf(x);
        auto enc = models::encoder_graph(tape, bundle.encoder, arch, vx, tape.leaf(eps));
        auto x_hat = models::decoder_graph(tape, bundle.decoder, arch,
                                            tape.concat_cols(enc.z, enc.y));
        auto y_rec = models::encoder_y_graph(tape, bundle.encoder, arch, x_hat);
        auto x_prior = models::decoder_graph(tape, bundle.decoder, arch, tape.leaf(zp));
        auto c_real = models::discriminator_graph(tape, bundle.discriminator, arch, vx);
        auto c_rec = models::discriminator_graph(tape, bundle.discriminator, arch, x_hat);
        auto c_prior = models::discriminator_graph(tape, bundle.discriminator, arch, x_prior);
        auto y_aux = models::aux_graph(tape, bundle.auxiliary, arch, enc.z);

        auto rec = tape.bce_mean(x, x_hat);
        auto kl = tape.kl_gauss(enc.mu, enc.log_var);
        auto cls = tape.bce_mean(y, enc.y);
        auto cls_rec = tape.bce_mean(y, y_rec);
        const auto ones = Tensor<double>::full({batch, 1}, 1.0);
        const auto zeros = Tensor<double>::zeros({batch, 1});
        auto gan = tape.lincomb({{tape.bce_mean(ones, c_real), 1.0 / 3.0},
                                 {tape.bce_mean(zeros, c_rec), 1.0 / 3.0},
                                 {tape.bce_mean(zeros, c_prior), 1.0 / 3.0}});
        auto aux = tape.bce_mean(y, y_aux);
        switch (which) {
            case kRec: return rec;
            case kKl: return kl;
            case kClass: return cls;
            case kClassRec: return cls_rec;
            case kGan: return gan;
            case kAux: return aux;
            case kEnc:
                return tape.lincomb({{rec, 1.0},
                                     {kl, c.alpha},
                                     {cls_rec, c.beta},
                                     {cls, c.rho},
                                     {gan, -c.delta},
                                     {aux, -1.0}});
            case kDec:
            default:
                return tape.lincomb({{rec, 1.0}, {cls_rec, c.beta}, {gan, -c.delta}});
        }
    };

    std::vector<Tensor<double>*> params, grads;
    for (auto* net : {&bundle.encoder, &bundle.decoder, &bundle.discriminator, &bundle.auxiliary})
        for (size_t i = 0; i < net->values.size(); ++i) {
            params.push_back(&net->values[i]);
            grads.push_back(&net->grads[i]);
        }

    bool all_pass = true;
    std::string detail;
    for (int which = 0; which < kLossCount; ++which) {
        for (auto* net :
             {&bundle.encoder, &bundle.decoder, &bundle.discriminator, &bundle.auxiliary})
            net->zero_grads();
        {
            ad::Tape<double> tape;
            auto loss = build(tape, static_cast<Loss>(which));
            tape.backward(loss, ad::kAllGroups);
        }
        auto eval = [&]() {
            ad::Tape<double> tape;
            return static_cast<double>(tape.val(build(tape, static_cast<Loss>(which)))[0]);
        };
        const FdReport rep = fd_check(params, grads, eval, 1e-5, 1e-4);
        const bool pass = rep.pass_fraction() >= 0.99;
        all_pass = all_pass && pass;
        detail += fmt("%s %.2f%%%s ", names[which], 100.0 * rep.pass_fraction(),
                      pass ? "" : "(FAIL)");
    }
    int64_t scalar_count = 0;
    for (const auto* t : params) scalar_count += t->numel();
    announce(2, "gradient correctness", all_pass,
             detail + fmt("over %lld parameters, rel tol 1e-4",
                          static_cast<long long>(scalar_count)));
    CHECK(all_pass);
}

TEST_CASE("criterion 3: factorization dynamics (probe on frozen codes)") {
    auto& world = World::get();
    world.ensure_grid();
    bool pass = true;
    std::string detail = "probe acc per seed: ifcvae {";
    for (const auto& rep : world.row_with_aux().per_seed) {
        pass = pass && rep.aux_probe_acc <= 0.55;
        detail += fmt(" %.3f", rep.aux_probe_acc);
    }
    detail += " } <= 0.55; naive {";
    for (const auto& rep : world.row_no_aux().per_seed) {
        pass = pass && rep.aux_probe_acc >= 0.80;
        detail += fmt(" %.3f", rep.aux_probe_acc);
    }
    detail += " } >= 0.80";
    announce(3, "factorization dynamics", pass, detail);
    CHECK(pass);
}

TEST_CASE("criterion 4: edit success and the naive failure signature") {
    auto& world = World::get();
    world.ensure_grid();
    const auto& full = world.row_with_aux().mean;
    const auto& naive = world.row_no_aux().mean;
    const double signature = std::abs(naive.c_attr0 + naive.c_attr1 - 1.0);
    const bool pass = full.c_attr0 >= 0.90 && full.c_attr1 >= 0.90 && signature <= 0.15;
    announce(4, "edit success", pass,
             fmt("full model c0=%.3f c1=%.3f (>= 0.90); naive |c0+c1-1| = %.3f (<= 0.15)",
                 full.c_attr0, full.c_attr1, signature));
    CHECK(pass);
}

TEST_CASE("criterion 5: ablation ordering") {
    auto& world = World::get();
    world.ensure_grid();
    const auto& with_aux = world.row_with_aux().mean;
    const auto& no_aux = world.row_no_aux().mean;
    const auto& with_classrec = world.grid_extra[0].mean;
    const double c0_gap = with_aux.c_attr0 - no_aux.c_attr0;
    const double mse_shift =
        std::abs(with_classrec.mse - with_aux.mse) / std::max(with_aux.mse, 1e-12);
    const bool pass = c0_gap >= 0.4 && mse_shift < 0.20;
    announce(5, "ablation ordering", pass,
             fmt("c0 gap (with aux - without) = %.3f (>= 0.4); class_rec MSE shift = %.1f%% "
                 "(< 20%%)",
                 c0_gap, 100.0 * mse_shift));
    CHECK(pass);
}

TEST_CASE("criterion 6: encoder head as attribute classifier") {
    auto& world = World::get();
    world.ensure_grid();
    double worst = 1.0;
    for (const auto& rep : world.row_with_aux().per_seed)
        worst = std::min(worst, rep.enc_cls_acc);
    const bool pass = worst >= 0.95;
    announce(6, "encoder-as-classifier", pass,
             fmt("held-out label-head accuracy, worst of 3 seeds = %.4f (>= 0.95)", worst));
    CHECK(pass);
}

TEST_CASE("criterion 7: reconstruction fidelity and regularization contrast") {
    auto& world = World::get();
    world.ensure_contrast();
    const double ratio = world.high_alpha.mse / world.low_alpha.mse;
    const bool pass = world.low_alpha.mse <= 0.02 && ratio >= 1.3;
    announce(7, "reconstruction fidelity", pass,
             fmt("full-model MSE = %.4f (<= 0.02); alpha 0.1 vs 0.005 MSE ratio = %.2f (>= 1.3)",
                 world.low_alpha.mse, ratio));
    CHECK(pass);
}

TEST_CASE("trained-model spot checks: edit locality, idempotence, discriminator, grid") {
    auto& world = World::get();
    world.ensure_contrast();
    auto& bundle = *world.full_bundle;
    const auto [attr1_x, attr1_y] = world.data.split_batch(synthdata::Split::test, 1);

    // Edits concentrate in the reserved glyph strip.
    const auto edit0 = ev::edit_attribute(bundle, attr1_x, 0);
    const auto edit1 = ev::edit_attribute(bundle, attr1_x, 1);
    const auto mask = synthdata::glyph_mask(32);
    const int64_t n = attr1_x.dim(0);
    double masked = 0.0, total = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < 32; ++y)
                for (int64_t x = 0; x < 32; ++x) {
                    const double d =
                        std::abs(edit1.at(i, c, y, x) - edit0.at(i, c, y, x));
                    total += d;
                    if (mask.data[static_cast<size_t>(y * 32 + x)] > 0.0f) masked += d;
                }
    const double locality = masked / std::max(total, 1e-12);
    INFO("glyph-region share of the edit difference: ", locality);
    CHECK(locality > 0.5);

    // Editing twice with the same target changes nothing appreciable.
    const auto edit1_again = ev::edit_attribute(bundle, edit1, 1);
    CHECK(ev::mse(edit1_again, edit1) < 0.01);

    // The discriminator rates real data above prior decodes.
    Rng rng(33);
    Tensor<float> z({64, bundle.arch.d_z});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    Tensor<float> y_prior({64});
    for (auto& v : y_prior.data) v = rng.bernoulli() ? 1.0f : 0.0f;
    const auto fake = models::decode(bundle, z, y_prior);
    Tensor<float> real = Tensor<float>::uninit(fake.shape);
    std::memcpy(real.ptr(), attr1_x.ptr(), sizeof(float) * static_cast<size_t>(real.numel()));
    const auto score_real = models::discriminate(bundle, real);
    const auto score_fake = models::discriminate(bundle, fake);
    double mean_real = 0.0, mean_fake = 0.0;
    for (int64_t i = 0; i < 64; ++i) {
        mean_real += score_real[i] / 64.0;
        mean_fake += score_fake[i] / 64.0;
    }
    INFO("discriminator means: real ", mean_real, " prior decode ", mean_fake);
    CHECK(mean_real > mean_fake);

    // Rendered grid rows are separable by the oracle after a PNG round trip.
    const int64_t cols = 8;
    std::vector<int64_t> shape = {cols, 3, 32, 32};
    Tensor<float> originals = Tensor<float>::uninit(shape);
    std::memcpy(originals.ptr(), attr1_x.ptr(),
                sizeof(float) * static_cast<size_t>(originals.numel()));
    const auto row1 = ev::edit_attribute(bundle, originals, 1);
    const auto row0 = ev::edit_attribute(bundle, originals, 0);
    const auto grid_path =
        (std::filesystem::temp_directory_path() / "factorkit_accept_grid.png").string();
    ev::render_grid({originals, row1, row0}, grid_path);
    const auto decoded = image_io::read_png(grid_path);
    REQUIRE(decoded.dim(1) == 3 * 32 + 2 * 2);
    REQUIRE(decoded.dim(2) == cols * 32 + (cols - 1) * 2);
    const int expected[3] = {1, 1, 0};
    bool rows_match = true;
    for (int row = 0; row < 3; ++row)
        for (int64_t i = 0; i < cols; ++i) {
            Tensor<float> tile({1, 3, 32, 32});
            const int64_t grid_h = decoded.dim(1), grid_w = decoded.dim(2);
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < 32; ++y)
                    for (int64_t x = 0; x < 32; ++x)
                        tile.at(0, c, y, x) =
                            decoded.data[static_cast<size_t>((c * grid_h + row * 34 + y) * grid_w +
                                                             i * 34 + x)];
            rows_match = rows_match &&
                         synthdata::pixel_rule_label(tile, 0) == expected[row];
        }
    CHECK(rows_match);
    std::filesystem::remove(grid_path);
}

TEST_CASE("criterion 8: determinism and checkpointing") {
    const auto data = synthdata::generate_dataset(2500, 4, {}, 32, 3);
    auto cfg = grid_config();
    cfg.epochs = 4;
    cfg.seed = 9;
    cfg.checkpoint_every = 2;

    const auto a = training::train(data, cfg);
    const auto b = training::train(data, cfg);
    const bool logs_identical = a.metrics_text == b.metrics_text;

    const auto tmp = std::filesystem::temp_directory_path() / "factorkit_accept_resume";
    std::filesystem::remove_all(tmp);
    const auto full = training::train(data, cfg, tmp.string());
    const auto resumed =
        training::resume(data, cfg, (tmp / "ckpt_epoch_2.fkck").string());
    bool resume_identical =
        resumed.final_val.rec == full.final_val.rec &&
        resumed.final_val.enc_total == full.final_val.enc_total &&
        resumed.final_val_mse == full.final_val_mse;
    for (size_t i = 0;
         resume_identical && i < full.bundle.encoder.values.size(); ++i)
        resume_identical = resumed.bundle.encoder.values[i].data ==
                           full.bundle.encoder.values[i].data;
    // And the resumed metrics are exactly the tail of the uninterrupted log.
    resume_identical =
        resume_identical && full.metrics_text.size() > resumed.metrics_text.size() &&
        full.metrics_text.compare(full.metrics_text.size() - resumed.metrics_text.size(),
                                  resumed.metrics_text.size(), resumed.metrics_text) == 0;
    std::filesystem::remove_all(tmp);

    const bool pass = logs_identical && resume_identical;
    announce(8, "determinism & checkpointing", pass,
             fmt("metrics logs bit-identical: %s; resume matches uninterrupted run exactly: %s",
                 logs_identical ? "yes" : "no", resume_identical ? "yes" : "no"));
    CHECK(pass);
}
