#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace otpel::rng {

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic random stream. Distributions are hand-rolled on top of the
// raw 64-bit output so values do not depend on the standard library's
// distribution implementations.
class Stream {
public:
    explicit Stream(uint64_t seed) : gen_(seed) {}

    // Independent substream for (seed, purpose, index). Used to keep the
    // training path, the OT evaluation, and logging on separate streams so
    // toggling one never perturbs another.
    static Stream derive(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
        uint64_t h = fnv1a64(purpose);
        return Stream(splitmix64(seed ^ splitmix64(h + 0x9e3779b97f4a7c15ULL * (index + 1))));
    }

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller without caching: every call consumes exactly two uniforms.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> gaussian_vec(size_t n, double scale = 1.0) {
        std::vector<double> out(n);
        for (auto& v : out) v = scale * gaussian();
        return out;
    }

    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = n; i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(idx[i - 1], idx[j]);
        }
        return idx;
    }

    // k distinct indices from [0, n). Order is the sampling order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        std::vector<size_t> idx = permutation(n);
        idx.resize(k < n ? k : n);
        return idx;
    }

private:
    std::mt19937_64 gen_;
};

} // namespace otpel::rng
