#include "faircl/continual/replay.hpp"

#include <algorithm>

namespace faircl {

void buffer_insert(ReplayBuffer& buffer, const Sample& sample) {
    ++buffer.seen_count;
    if (buffer.capacity == 0) return;
    if (buffer.slots.size() < buffer.capacity) {
        buffer.slots.push_back(sample);
        return;
    }
    // keep with probability capacity / seen_count, evicting a uniform slot
    const std::size_t j = uniform_index(buffer.rng, buffer.seen_count);
    if (j < buffer.capacity) buffer.slots[j] = sample;
}

std::vector<Sample> buffer_minibatch(ReplayBuffer& buffer, std::span<const Sample> current, std::size_t batch_size) {
    std::vector<Sample> out;
    if (buffer.slots.empty()) {
        const auto n = std::min(batch_size, current.size());
        out.assign(current.begin(), current.begin() + static_cast<std::ptrdiff_t>(n));
        return out;
    }
    const std::size_t old_count = (batch_size + 1) / 2;
    const std::size_t new_count = std::min(batch_size / 2, current.size());
    out.reserve(old_count + new_count);
    for (std::size_t i = 0; i < old_count; ++i) out.push_back(buffer.slots[uniform_index(buffer.rng, buffer.slots.size())]);
    out.insert(out.end(), current.begin(), current.begin() + static_cast<std::ptrdiff_t>(new_count));
    return out;
}

}  // namespace faircl
