#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace faircl {

/// Every stochastic component draws from an explicitly seeded engine.
using Rng = std::mt19937_64;

[[nodiscard]] inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

[[nodiscard]] inline double normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(rng);
}

/// Uniform integer in [0, n).
[[nodiscard]] inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Derives an independent stream from a base seed and a salt.
[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace faircl
