#pragma once

#include <cmath>
#include <cstdint>

namespace mmg {

// Deterministic pseudo-random generator used everywhere randomness is
// needed (parameter init, synthetic data, shuffles).  We deliberately do
// not use <random> distributions: the engine adaptors and
// normal_distribution are implementation-defined, and we want the same
// seed to produce bit-identical streams on every platform and standard
// library.
//
// The core is xorshift64* (Vigna 2016):
//     x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//     return x * 0x2545F4914F6CDD1D;
// seeded through one round of splitmix64 so that small consecutive seeds
// (0, 1, 2, ...) land in well-separated regions of the state space.
// Uniform doubles take the top 53 bits; normals come from the Box-Muller
// transform with the spare value cached.
class Rng {
public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        // splitmix64 step; also guards against the all-zero state that
        // xorshift can never leave.
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        state_ = z ^ (z >> 31);
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
        have_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Standard normal via Box-Muller.  Generates pairs; the second value
    // is cached so consecutive calls alternate cheap/expensive.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 must be strictly positive for the log.
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    // Integer in [0, n).  Uses rejection sampling to stay unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = 0;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Derive an independent stream; used to give each episode / each
    // parameter group its own generator so insertion order of one part
    // of the pipeline cannot perturb another.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9E3779B97F4A7C15ULL));
    }

    // Stream keyed purely by (seed, a, b): unlike fork(), the result does
    // not depend on how many values were drawn before, so e.g. episode
    // (class k, index e) always sees the same stream no matter what order
    // the dataset is materialized in.
    static Rng keyed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        auto mix = [](std::uint64_t z) {
            z += 0x9E3779B97F4A7C15ULL;
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
            return z ^ (z >> 31);
        };
        return Rng(mix(mix(mix(seed) ^ a) ^ b));
    }

private:
    std::uint64_t state_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Fisher-Yates shuffle driven by our Rng, so shuffles are reproducible
// across platforms too.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        if (i != j) std::swap(v[i], v[j]);
    }
}

} // namespace mmg
