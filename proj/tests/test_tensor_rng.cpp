#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "factorkit/rng.hpp"
#include "factorkit/tensor.hpp"

using namespace factorkit;

TEST_CASE("tensor shape and accessors") {
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0f;
    CHECK(t[5] == 5.0f);

    Tensor<float> img({2, 3, 4, 4});
    img.at(1, 2, 3, 3) = 1.0f;
    CHECK(img[img.numel() - 1] == 1.0f);

    CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f}), ContractError);
}

TEST_CASE("tensor finite check and cast") {
    Tensor<double> t({2}, {1.0, 2.0});
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK(!t.all_finite());

    Tensor<float> f = Tensor<double>({2}, {0.5, 0.25}).cast<float>();
    CHECK(f[1] == 0.25f);
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());
}

TEST_CASE("rng uniform range and normal moments") {
    Rng rng(7);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);

    sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.normal();
        sum += g;
        sum_sq += g * g;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
}

TEST_CASE("rng state roundtrip resumes the stream exactly") {
    Rng rng(99);
    for (int i = 0; i < 17; ++i) rng.normal();  // odd count leaves a cached spare
    std::stringstream ss;
    rng.save(ss);
    Rng restored;
    restored.load(ss);
    for (int i = 0; i < 50; ++i) {
        CHECK(rng.normal() == restored.normal());
        CHECK(rng.next_u64() == restored.next_u64());
    }
}

TEST_CASE("derived seeds differ per index") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
