#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "faircl/autodiff/tensor.hpp"
#include "faircl/task.hpp"

namespace faircl {

enum class Split { train, test, unassigned };

[[nodiscard]] std::string_view split_name(Split s) noexcept;

struct Sample {
    std::vector<double> features;  // row-major C*H*W, or D
    Shape shape;                   // {C, H, W} or {D}
    Label label;
    std::string domain;
    Split split = Split::unassigned;
    std::string source;  // manifest path, when loaded from an image

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// One domain's slice of the incremental stream.
struct Episode {
    std::string domain;
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::size_t position = 0;
};

/// Checks label range and domain presence for a task; ValidationError
/// otherwise.
void validate_sample(const Sample& s, const TaskSpec& task);

/// Distinct domains in first-seen order.
[[nodiscard]] std::vector<std::string> domains_of(const std::vector<Sample>& samples);

}  // namespace faircl
