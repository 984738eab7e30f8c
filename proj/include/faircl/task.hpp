#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace faircl {

/// Expression recognition is single-label over M classes; action-unit
/// detection is multi-label over A units.
enum class TaskKind { expression, action_units };

struct TaskSpec {
    TaskKind kind = TaskKind::expression;
    std::size_t outputs = 7;  // M classes or A units
};

/// Class index (expression) or 0/1 activation per unit (action units).
using Label = std::variant<std::size_t, std::vector<std::uint8_t>>;

[[nodiscard]] inline bool is_class_label(const Label& l) noexcept { return l.index() == 0; }
[[nodiscard]] inline std::size_t class_of(const Label& l) { return std::get<std::size_t>(l); }
[[nodiscard]] inline const std::vector<std::uint8_t>& units_of(const Label& l) {
    return std::get<std::vector<std::uint8_t>>(l);
}

[[nodiscard]] std::string_view task_name(TaskKind kind) noexcept;
[[nodiscard]] TaskKind parse_task(std::string_view text);

}  // namespace faircl
