#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace actra {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic random stream. std::mt19937_64 is fully specified by the
// standard, and all value transforms (uniform, normal, ints) are done here
// rather than through std::*_distribution, whose output is
// implementation-defined. Identical seeds give identical streams on any
// conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }

    // Derive an independent stream, e.g. per epoch or per rollout. Pure
    // function of (seed, salt); does not consume from this stream.
    Rng fork(std::uint64_t salt) const {
        return Rng(splitmix64(seed_ ^ splitmix64(salt ^ 0xa0761d6478bd642fULL)));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to mean +- cutoff*stddev, by resampling.
    double truncated_normal(double mean, double stddev, double cutoff = 2.0) {
        double z;
        do {
            z = normal();
        } while (z < -cutoff || z > cutoff);
        return mean + stddev * z;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace actra
