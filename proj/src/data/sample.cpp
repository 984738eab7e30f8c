#include "faircl/data/sample.hpp"

#include <algorithm>

#include "faircl/error.hpp"

namespace faircl {

std::string_view split_name(Split s) noexcept {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::unassigned: return "";
    }
    return "";
}

void validate_sample(const Sample& s, const TaskSpec& task) {
    if (s.domain.empty()) throw ValidationError("sample: empty domain");
    if (shape_size(s.shape) != s.features.size()) throw ValidationError("sample: features do not match shape");
    if (task.kind == TaskKind::expression) {
        if (!is_class_label(s.label)) throw ValidationError("sample: expression task needs a class label");
        if (class_of(s.label) >= task.outputs) {
            throw ValidationError("sample: label " + std::to_string(class_of(s.label)) + " outside [0, " +
                                  std::to_string(task.outputs) + ")");
        }
    } else {
        if (is_class_label(s.label)) throw ValidationError("sample: AU task needs a unit vector label");
        const auto& u = units_of(s.label);
        if (u.size() != task.outputs) {
            throw ValidationError("sample: AU label has " + std::to_string(u.size()) + " units, expected " +
                                  std::to_string(task.outputs));
        }
        if (std::any_of(u.begin(), u.end(), [](auto b) { return b > 1; })) {
            throw ValidationError("sample: AU label must be binary");
        }
    }
}

std::vector<std::string> domains_of(const std::vector<Sample>& samples) {
    std::vector<std::string> out;
    for (const auto& s : samples) {
        if (std::find(out.begin(), out.end(), s.domain) == out.end()) out.push_back(s.domain);
    }
    return out;
}

}  // namespace faircl
