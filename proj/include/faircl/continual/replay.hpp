#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "faircl/data/sample.hpp"
#include "faircl/rng.hpp"

namespace faircl {

/// Global reservoir over every sample offered so far. Owns its RNG so
/// replay decisions never perturb the training stream.
struct ReplayBuffer {
    std::size_t capacity = 0;
    std::size_t seen_count = 0;
    std::vector<Sample> slots;
    std::uint64_t rng_seed = 0;
    Rng rng{0};

    ReplayBuffer() = default;
    ReplayBuffer(std::size_t cap, std::uint64_t seed) : capacity(cap), rng_seed(seed), rng(seed) {}
};

/// Reservoir step. Capacity 0 is a no-op (seen_count still counts).
void buffer_insert(ReplayBuffer& buffer, const Sample& sample);

/// ceil(B/2) draws with replacement from the buffer followed by the first
/// floor(B/2) samples of `current`. An empty buffer returns the first B
/// of `current` unchanged.
[[nodiscard]] std::vector<Sample> buffer_minibatch(ReplayBuffer& buffer, std::span<const Sample> current,
                                                   std::size_t batch_size);

}  // namespace faircl
