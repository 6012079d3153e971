#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "factorkit/autodiff.hpp"
#include "factorkit/losses.hpp"
#include "factorkit/rng.hpp"

using namespace factorkit;
namespace ls = factorkit::losses;

namespace {

constexpr double kLn2 = 0.6931471805599453;

// Monte-Carlo estimate of KL(q || N(0,I)) for diagonal-Gaussian q: draws z ~ q
// and averages log q(z) - log p(z). Independent of the analytic formula.
double kl_monte_carlo(const Tensor<double>& mu, const Tensor<double>& log_var, int64_t draws,
                      uint64_t seed) {
    Rng rng(seed);
    const int64_t B = mu.dim(0), D = mu.dim(1);
    double total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        double acc = 0.0;
        for (int64_t s = 0; s < draws; ++s) {
            for (int64_t d = 0; d < D; ++d) {
                const double m = mu.at(b, d);
                const double lv = log_var.at(b, d);
                const double sigma = std::exp(0.5 * lv);
                const double z = m + sigma * rng.normal();
                const double log_q = -0.5 * ((z - m) * (z - m) / (sigma * sigma) + lv);
                const double log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        total += acc / static_cast<double>(draws);
    }
    return total / static_cast<double>(B);
}

}  // namespace

TEST_CASE("bce hand-computed values") {
    Tensor<double> perfect_t({1}, {1.0});
    Tensor<double> perfect_p({1}, {1.0 - 1e-7});
    CHECK(ls::bce(perfect_t, perfect_p) == doctest::Approx(0.0).epsilon(1e-6));

    Tensor<double> t({2}, {1.0, 0.0});
    Tensor<double> p({2}, {0.5, 0.5});
    CHECK(ls::bce(t, p) == doctest::Approx(kLn2).epsilon(1e-12));

    // Constant-half predictions give ln 2 regardless of the target.
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> target({8});
        for (auto& v : target.data) v = rng.bernoulli() ? 1.0 : 0.0;
        CHECK(ls::bce(target, Tensor<double>::full({8}, 0.5)) == doctest::Approx(kLn2));
    }
}

TEST_CASE("bce contract errors") {
    Tensor<double> bad_t({1}, {1.5});
    Tensor<double> p({1}, {0.5});
    CHECK_THROWS_AS(ls::bce(bad_t, p), ContractError);
    Tensor<double> t2({2}, {1.0, 0.0});
    CHECK_THROWS_AS(ls::bce(t2, p), ContractError);
}

TEST_CASE("kl closed-form values") {
    CHECK(ls::kl_divergence(Tensor<double>::zeros({1, 1}), Tensor<double>::zeros({1, 1})) ==
          doctest::Approx(0.0));
    Tensor<double> mu({1, 1}, {1.0});
    CHECK(ls::kl_divergence(mu, Tensor<double>::zeros({1, 1})) == doctest::Approx(0.5));
}

TEST_CASE("kl matches a monte-carlo oracle within 1e-2") {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> mu({2, 3});
        Tensor<double> lv({2, 3});
        for (auto& v : mu.data) v = rng.normal();
        for (auto& v : lv.data) v = 0.8 * rng.normal();
        const double analytic = ls::kl_divergence(mu, lv);
        const double mc = kl_monte_carlo(mu, lv, 1000000, 100 + static_cast<uint64_t>(trial));
        CHECK(std::abs(analytic - mc) < 1e-2);
    }
}

TEST_CASE("kl is zero only at the prior") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> mu({1, 2});
        Tensor<double> lv({1, 2});
        for (auto& v : mu.data) v = rng.normal();
        for (auto& v : lv.data) v = rng.normal();
        const bool at_prior = mu[0] == 0.0 && mu[1] == 0.0 && lv[0] == 0.0 && lv[1] == 0.0;
        const double kl = ls::kl_divergence(mu, lv);
        CHECK(kl >= 0.0);
        if (!at_prior) CHECK(kl > 0.0);
    }
    CHECK_THROWS_AS(
        ls::kl_divergence(Tensor<double>({1, 1}, {std::nan("")}), Tensor<double>::zeros({1, 1})),
        NumericError);
}

TEST_CASE("gan loss hand-computed values and symmetry") {
    const auto near1 = Tensor<double>::full({4}, 1.0 - 1e-7);
    const auto near0 = Tensor<double>::full({4}, 1e-7);
    CHECK(ls::gan_loss(near1, near0, near0) == doctest::Approx(0.0).epsilon(1e-6));

    const auto half = Tensor<double>::full({4}, 0.5);
    CHECK(ls::gan_loss(half, half, half) == doctest::Approx(kLn2).epsilon(1e-12));

    Rng rng(3);
    Tensor<double> a({4}), b({4}), c({4});
    for (auto& v : a.data) v = rng.uniform(0.1, 0.9);
    for (auto& v : b.data) v = rng.uniform(0.1, 0.9);
    for (auto& v : c.data) v = rng.uniform(0.1, 0.9);
    CHECK(ls::gan_loss(a, b, c) == doctest::Approx(ls::gan_loss(a, c, b)).epsilon(1e-15));

    Tensor<double> five({5});
    CHECK_THROWS_AS(ls::gan_loss(a, b, five), ContractError);
}

TEST_CASE("reconstruction loss values and monotonicity") {
    Tensor<double> x({4}, {1.0, 0.0, 1.0, 0.0});
    Tensor<double> x_eps({4}, {1.0 - 1e-7, 1e-7, 1.0 - 1e-7, 1e-7});
    CHECK(ls::reconstruction_loss(x, x_eps) == doctest::Approx(0.0).epsilon(1e-6));

    const auto ones = Tensor<double>::full({16}, 1.0);
    const auto half = Tensor<double>::full({16}, 0.5);
    CHECK(ls::reconstruction_loss(ones, half) == doctest::Approx(kLn2).epsilon(1e-12));

    // Moving the prediction toward the target never increases the loss.
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> target({6}), pred({6}), closer({6});
        for (int64_t i = 0; i < 6; ++i) {
            target[i] = rng.uniform();
            pred[i] = rng.uniform(0.01, 0.99);
            closer[i] = pred[i] + 0.5 * (target[i] - pred[i]);
        }
        CHECK(ls::reconstruction_loss(target, closer) <=
              ls::reconstruction_loss(target, pred) + 1e-12);
    }
}

TEST_CASE("composite losses are exact linear combinations") {
    CHECK(ls::decoder_loss(0.5, 0.2, 0.1, {.alpha = 0, .beta = 1, .rho = 0, .delta = 1}) ==
          doctest::Approx(0.6).epsilon(1e-15));
    CHECK(ls::decoder_loss(0.5, 0.2, 0.1, {.alpha = 0, .beta = 0, .rho = 0, .delta = 0}) == 0.5);

    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const double rec = rng.uniform(), kl = rng.uniform(), crec = rng.uniform();
        const double cin = rng.uniform(), gan = rng.uniform(), aux = rng.uniform();
        ls::Coeffs c{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        const double dec = ls::decoder_loss(rec, crec, gan, c);
        CHECK(std::abs(dec - (rec + c.beta * crec - c.delta * gan)) < 1e-12);
        const double enc = ls::encoder_loss(rec, kl, crec, cin, gan, aux, c, true, true);
        CHECK(std::abs(enc - (rec + c.alpha * kl + c.beta * crec + c.rho * cin - c.delta * gan -
                              aux)) < 1e-12);
        // Naive mode drops only the adversarial identity term.
        const double enc_naive = ls::encoder_loss(rec, kl, crec, cin, gan, aux, c, false, true);
        CHECK(std::abs(enc_naive - (enc + aux)) < 1e-12);
    }

    // All coefficients zero and the aux term excluded reduces to the
    // reconstruction loss alone.
    CHECK(ls::encoder_loss(0.37, 9.0, 5.0, 4.0, 3.0, 2.0, {}, false, true) ==
          doctest::Approx(0.37));

    CHECK_THROWS_AS(ls::decoder_loss(1, 1, 1, {.alpha = 0, .beta = -1, .rho = 0, .delta = 0}),
                    ConfigError);
}

TEST_CASE("table 1 coefficient set is used verbatim") {
    const ls::Coeffs c{.alpha = 0.2, .beta = 0.0, .rho = 0.1, .delta = 0.1};
    const double enc = ls::encoder_loss(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, c, true, true);
    CHECK(enc == doctest::Approx(1.0 + 0.2 + 0.0 + 0.1 - 0.1 - 1.0).epsilon(1e-15));
}

TEST_CASE("graph losses agree with the eager implementations") {
    Rng rng(41);
    ad::Tape<double> tape;
    Tensor<double> target({3, 4});
    Tensor<double> pred({3, 4});
    for (auto& v : target.data) v = rng.bernoulli() ? 1.0 : 0.0;
    for (auto& v : pred.data) v = rng.uniform(0.05, 0.95);
    const auto loss = tape.bce_mean(target, tape.leaf(pred));
    CHECK(tape.val(loss)[0] == doctest::Approx(ls::bce(target, pred)).epsilon(1e-12));

    Tensor<double> mu({3, 4}), lv({3, 4});
    for (auto& v : mu.data) v = rng.normal();
    for (auto& v : lv.data) v = rng.normal();
    const auto kl = tape.kl_gauss(tape.leaf(mu), tape.leaf(lv));
    CHECK(tape.val(kl)[0] == doctest::Approx(ls::kl_divergence(mu, lv)).epsilon(1e-12));
}
