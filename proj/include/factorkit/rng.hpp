#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

namespace factorkit {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed, used for per-sample / per-run substreams.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
    uint64_t s = master ^ (0x2545f4914f6cdd1dULL * (index + 1));
    return splitmix64(s);
}

// xoshiro256++ with Box-Muller normals. Self-contained so that streams are
// reproducible across standard libraries and platforms, and the full state
// (including the cached normal) serializes into checkpoints.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // N(0, 1) via Box-Muller; pairs are cached to keep draws cheap.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    void save(std::ostream& os) const {
        for (auto word : state_) write_u64(os, word);
        write_u64(os, has_spare_ ? 1 : 0);
        uint64_t bits = 0;
        static_assert(sizeof(bits) == sizeof(spare_));
        __builtin_memcpy(&bits, &spare_, sizeof(bits));
        write_u64(os, bits);
    }

    void load(std::istream& is) {
        for (auto& word : state_) word = read_u64(is);
        has_spare_ = read_u64(is) != 0;
        const uint64_t bits = read_u64(is);
        __builtin_memcpy(&spare_, &bits, sizeof(spare_));
    }

    static void write_u64(std::ostream& os, uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(buf), 8);
    }

    static uint64_t read_u64(std::istream& is) {
        unsigned char buf[8] = {};
        is.read(reinterpret_cast<char*>(buf), 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
        return v;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace factorkit
