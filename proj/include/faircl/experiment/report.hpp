#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace faircl {

enum class Mark { none, best, second };

/// Rows are methods, columns are attribute (x augmentation, x domain for
/// accuracy) cells read back from the CSV outputs.
struct ReportMatrix {
    std::string title;
    std::vector<std::string> columns;
    struct Row {
        std::string method;
        std::string group;  // baseline, non-CL or CL
        std::vector<std::optional<double>> values;
        std::vector<Mark> marks;
    };
    std::vector<Row> rows;
};

/// Highest value(s) get best; the next distinct value gets second. Missing
/// cells are never marked.
[[nodiscard]] std::vector<Mark> mark_column(const std::vector<std::optional<double>>& values);

[[nodiscard]] std::string method_group(const std::string& method);

/// Reads fairness.csv from each directory. Raises ValidationError when none
/// has results.
[[nodiscard]] ReportMatrix fairness_matrix(const std::vector<std::filesystem::path>& runs);
[[nodiscard]] ReportMatrix accuracy_matrix(const std::vector<std::filesystem::path>& runs);

/// Best values print as `0.9500*`, second-best as `[0.9000]`.
void render_text(std::ostream& os, const ReportMatrix& m);
void render_csv(std::ostream& os, const ReportMatrix& m);

}  // namespace faircl
