#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ptrl {

namespace detail {

// splitmix64 finalizer; used both as a generator step and as a seed mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic 64-bit RNG (xoshiro256++). Self-contained so that draw
/// sequences do not depend on the standard library implementation; the same
/// seed yields the same stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    /// Independent stream for a (seed, tag, index) triple. Used to give each
    /// environment / subsystem its own schedule-independent sequence.
    static Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
        std::uint64_t sm = seed;
        std::uint64_t a = detail::splitmix64(sm);
        sm ^= tag * 0x9e3779b97f4a7c15ULL;
        std::uint64_t b = detail::splitmix64(sm);
        sm ^= index * 0xc2b2ae3d27d4eb4fULL;
        std::uint64_t c = detail::splitmix64(sm);
        return Rng(a ^ (b << 1) ^ c);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per
    /// call, which keeps stream alignment independent of usage patterns.
    double gaussian() {
        // (0, 1] so the log is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

}  // namespace ptrl
