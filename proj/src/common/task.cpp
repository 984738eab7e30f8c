#include "faircl/task.hpp"

#include "faircl/error.hpp"

namespace faircl {

std::string_view task_name(TaskKind kind) noexcept {
    return kind == TaskKind::expression ? "expression" : "au";
}

TaskKind parse_task(std::string_view text) {
    if (text == "expression") return TaskKind::expression;
    if (text == "au" || text == "action_units") return TaskKind::action_units;
    throw ValidationError("unknown task '" + std::string(text) + "' (expected expression or au)");
}

}  // namespace faircl
