#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "factorkit/losses.hpp"
#include "factorkit/models.hpp"
#include "factorkit/rng.hpp"
#include "fd_check.hpp"

using namespace factorkit;
using namespace factorkit::models;

namespace {

ArchSpec mini_arch() {
    ArchSpec a;
    a.image_size = 8;
    a.channels = 3;
    a.d_z = 4;
    a.base_channels = 4;
    a.aux_hidden = 16;
    return a;
}

Tensor<float> random_images(int64_t n, const ArchSpec& a, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x({n, a.channels, a.image_size, a.image_size});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    return x;
}

}  // namespace

TEST_CASE("zero noise collapses the sample onto the posterior mean") {
    auto bundle = init_bundle<float>(mini_arch(), 3);
    const auto x = random_images(5, bundle.arch, 1);
    const auto post = encode(bundle, x, Tensor<float>::zeros({5, 4}));
    CHECK(post.z_hat.data == post.mu.data);
    for (const float y : post.y_hat.data) {
        CHECK(y > 0.0f);
        CHECK(y < 1.0f);
    }
}

TEST_CASE("encode is deterministic at fixed inputs and noise") {
    auto bundle = init_bundle<float>(mini_arch(), 4);
    const auto x = random_images(3, bundle.arch, 2);
    Rng r1(9);
    Tensor<float> noise({3, 4});
    for (auto& v : noise.data) v = static_cast<float>(r1.normal());
    const auto a = encode(bundle, x, noise);
    const auto b = encode(bundle, x, noise);
    CHECK(a.mu.data == b.mu.data);
    CHECK(a.log_var.data == b.log_var.data);
    CHECK(a.z_hat.data == b.z_hat.data);
    CHECK(a.y_hat.data == b.y_hat.data);
}

TEST_CASE("noise perturbation moves the sample by sigma elementwise") {
    auto bundle = init_bundle<float>(mini_arch(), 5);
    // 2-dim check on the miniature architecture, against the hand formula
    // z = mu + exp(log_var / 2) * eps.
    const auto x = random_images(1, bundle.arch, 3);
    Tensor<float> eps0({1, 4}, {0.3f, -0.7f, 1.1f, 0.0f});
    Tensor<float> delta({1, 4}, {0.5f, -0.25f, 0.0f, 2.0f});
    Tensor<float> eps1({1, 4});
    for (int64_t i = 0; i < 4; ++i) eps1[i] = eps0[i] + delta[i];
    const auto p0 = encode(bundle, x, eps0);
    const auto p1 = encode(bundle, x, eps1);
    for (int64_t i = 0; i < 4; ++i) {
        const float sigma = std::exp(0.5f * p0.log_var[i]);
        CHECK(p1.z_hat[i] - p0.z_hat[i] == doctest::Approx(sigma * delta[i]).epsilon(1e-5));
    }
}

TEST_CASE("encode validates inputs") {
    auto bundle = init_bundle<float>(mini_arch(), 6);
    auto x = random_images(2, bundle.arch, 4);
    x[0] = 1.5f;
    CHECK_THROWS_AS(encode(bundle, x, Tensor<float>::zeros({2, 4})), ContractError);
    const auto ok = random_images(2, bundle.arch, 4);
    CHECK_THROWS_AS(encode(bundle, ok, Tensor<float>::zeros({2, 3})), ContractError);
    CHECK_THROWS_AS(encode(bundle, ok), ContractError);  // no noise, no generator
}

TEST_CASE("decode produces valid-range images for both attribute settings") {
    auto bundle = init_bundle<float>(mini_arch(), 7);
    Rng rng(5);
    Tensor<float> z({4, 4});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    for (const float y : {0.0f, 1.0f}) {
        const auto img = decode(bundle, z, Tensor<float>::full({4}, y));
        CHECK(img.shape == std::vector<int64_t>{4, 3, 8, 8});
        for (const float v : img.data) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
    }
    const auto again = decode(bundle, z, Tensor<float>::full({4}, 1.0f));
    const auto again2 = decode(bundle, z, Tensor<float>::full({4}, 1.0f));
    CHECK(again.data == again2.data);

    CHECK_THROWS_AS(decode(bundle, Tensor<float>::zeros({4, 3}), Tensor<float>::zeros({4})),
                    ContractError);
}

TEST_CASE("discriminate and aux_predict return probabilities deterministically") {
    auto bundle = init_bundle<float>(mini_arch(), 8);
    const auto x = random_images(6, bundle.arch, 6);
    const auto s1 = discriminate(bundle, x);
    const auto s2 = discriminate(bundle, x);
    CHECK(s1.data == s2.data);
    for (const float v : s1.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    Rng rng(7);
    Tensor<float> z({6, 4});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    const auto p1 = aux_predict(bundle, z);
    const auto p2 = aux_predict(bundle, z);
    CHECK(p1.data == p2.data);
    for (const float v : p1.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("untrained auxiliary sits at chance on balanced data") {
    auto bundle = init_bundle<float>(mini_arch(), 9);
    Rng rng(11);
    const int64_t n = 400;
    Tensor<float> z({n, 4});
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    std::vector<int> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = (i % 2 == 0) ? 1 : 0;
    const auto probs = aux_predict(bundle, z);
    int64_t correct = 0;
    for (int64_t i = 0; i < n; ++i)
        correct += (probs[i] > 0.5f ? 1 : 0) == labels[static_cast<size_t>(i)];
    const double acc = static_cast<double>(correct) / static_cast<double>(n);
    CHECK(acc > 0.45);
    CHECK(acc < 0.55);
}

TEST_CASE("parameter counts are a pure function of the architecture") {
    const auto a = init_bundle<float>(mini_arch(), 1);
    const auto b = init_bundle<float>(mini_arch(), 999);
    CHECK(a.encoder.scalar_count() == b.encoder.scalar_count());
    CHECK(a.decoder.scalar_count() == b.decoder.scalar_count());
    CHECK(a.discriminator.scalar_count() == b.discriminator.scalar_count());
    CHECK(a.auxiliary.scalar_count() == b.auxiliary.scalar_count());

    ArchSpec res = mini_arch();
    res.residual_blocks = 1;
    const auto c = init_bundle<float>(res, 1);
    CHECK(c.encoder.scalar_count() > a.encoder.scalar_count());

    ArchSpec split = mini_arch();
    split.share_trunk = false;
    const auto d = init_bundle<float>(split, 1);
    CHECK(d.encoder.scalar_count() > a.encoder.scalar_count());

    // Decoder input width is d_z + 1: the appended attribute unit.
    CHECK(a.decoder.values[a.decoder.at("in.w")].dim(0) == mini_arch().d_z + 1);
}

TEST_CASE("the four parameter sets are disjoint") {
    auto bundle = init_bundle<float>(mini_arch(), 10);
    std::set<const void*> storage;
    int64_t tensors = 0;
    for (const auto* net :
         {&bundle.encoder, &bundle.decoder, &bundle.discriminator, &bundle.auxiliary})
        for (const auto& v : net->values) {
            storage.insert(v.ptr());
            ++tensors;
        }
    CHECK(static_cast<int64_t>(storage.size()) == tensors);
}

TEST_CASE("bundle serialization preserves forward outputs bit-exactly") {
    auto bundle = init_bundle<float>(mini_arch(), 11);
    const auto x = random_images(3, bundle.arch, 8);
    const auto noise = Tensor<float>::zeros({3, 4});
    const auto before = encode(bundle, x, noise);
    const auto disc_before = discriminate(bundle, x);

    std::stringstream ss;
    save_bundle(bundle, ss);
    auto restored = load_bundle(ss);
    const auto after = encode(restored, x, noise);
    const auto disc_after = discriminate(restored, x);
    CHECK(before.mu.data == after.mu.data);
    CHECK(before.log_var.data == after.log_var.data);
    CHECK(before.y_hat.data == after.y_hat.data);
    CHECK(disc_before.data == disc_after.data);

    std::stringstream bad("not a bundle");
    CHECK_THROWS_AS(load_bundle(bad), IoError);
}

TEST_CASE("residual and split-trunk variants forward cleanly") {
    for (const bool share : {true, false}) {
        ArchSpec a = mini_arch();
        a.residual_blocks = 1;
        a.share_trunk = share;
        auto bundle = init_bundle<float>(a, 12);
        const auto x = random_images(2, a, 9);
        const auto post = encode(bundle, x, Tensor<float>::zeros({2, 4}));
        CHECK(post.mu.all_finite());
        const auto img = decode(bundle, post.z_hat, Tensor<float>::full({2}, 1.0f));
        CHECK(img.all_finite());
    }
}

TEST_CASE("decoder and auxiliary gradients agree with finite differences") {
    // Double-precision miniature bundle; the full per-loss sweep over every
    // network runs in the acceptance suite.
    auto bundle = init_bundle<double>(mini_arch(), 13);
    Rng rng(21);
    Tensor<double> z({2, 5});
    for (auto& v : z.data) v = rng.normal();
    Tensor<double> target({2, 3, 8, 8});
    for (auto& v : target.data) v = rng.bernoulli() ? 1.0 : 0.0;

    auto eval_dec = [&]() {
        ad::Tape<double> tape;
        auto img = decoder_graph(tape, bundle.decoder, bundle.arch, tape.leaf(z));
        return static_cast<double>(tape.val(tape.bce_mean(target, img))[0]);
    };
    bundle.decoder.zero_grads();
    {
        ad::Tape<double> tape;
        auto img = decoder_graph(tape, bundle.decoder, bundle.arch, tape.leaf(z));
        tape.backward(tape.bce_mean(target, img), ad::kDecoder);
    }
    std::vector<Tensor<double>*> params, grads;
    for (size_t i = 0; i < bundle.decoder.values.size(); ++i) {
        params.push_back(&bundle.decoder.values[i]);
        grads.push_back(&bundle.decoder.grads[i]);
    }
    auto rep = fd_check(params, grads, eval_dec);
    INFO("decoder worst rel err ", rep.worst_rel);
    CHECK(rep.pass_fraction() >= 0.99);

    Tensor<double> zin({4, 4});
    for (auto& v : zin.data) v = rng.normal();
    Tensor<double> ylab({4, 1});
    for (auto& v : ylab.data) v = rng.bernoulli() ? 1.0 : 0.0;
    auto eval_aux = [&]() {
        ad::Tape<double> tape;
        auto p = aux_graph(tape, bundle.auxiliary, bundle.arch, tape.leaf(zin));
        return static_cast<double>(tape.val(tape.bce_mean(ylab, p))[0]);
    };
    bundle.auxiliary.zero_grads();
    {
        ad::Tape<double> tape;
        auto p = aux_graph(tape, bundle.auxiliary, bundle.arch, tape.leaf(zin));
        tape.backward(tape.bce_mean(ylab, p), ad::kAuxiliary);
    }
    params.clear();
    grads.clear();
    for (size_t i = 0; i < bundle.auxiliary.values.size(); ++i) {
        params.push_back(&bundle.auxiliary.values[i]);
        grads.push_back(&bundle.auxiliary.grads[i]);
    }
    rep = fd_check(params, grads, eval_aux);
    INFO("auxiliary worst rel err ", rep.worst_rel);
    CHECK(rep.pass_fraction() >= 0.99);
}
