#pragma once

#include <cmath>
#include <cstdint>

#include "streamlas/common.hpp"

namespace streamlas {

// SplitMix64: 64-bit integer-state generator. Chosen over std::mt19937 so
// that generated datasets are byte-identical across platforms and standard
// library implementations. Streams are split by hashing (seed, index) pairs,
// giving each utterance / component its own independent generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Child generator for substream `index`; deterministic and independent
    // of how much the parent has been consumed.
    Rng fork(std::uint64_t index) const {
        std::uint64_t z = state_ ^ (0xA0761D6478BD642FULL + index * 0xE7037ED1A0B428DBULL);
        z = (z ^ (z >> 32)) * 0xD6E8FEB86659FD93ULL;
        return Rng(z ^ (z >> 32));
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(
                        (static_cast<unsigned __int128>(next_u64()) * span) >> 64);
    }

    // Standard normal via Box-Muller (no cached spare: keeps the consumed
    // stream length predictable).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
};

}  // namespace streamlas
