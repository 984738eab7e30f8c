#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace faircl::csv {

/// Splits one CSV line into fields. Double-quoted fields may contain commas
/// and doubled quotes.
[[nodiscard]] std::vector<std::string> split_line(std::string_view line);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based file line of each row

    /// Column index of `name`, or npos.
    [[nodiscard]] std::size_t column(std::string_view name) const noexcept;
};

/// Reads a header line and data rows; blank lines are skipped. Rows whose
/// field count differs from the header raise ValidationError naming the line.
[[nodiscard]] Table read(std::istream& in);

/// Quotes a field when it contains a comma, quote or newline.
[[nodiscard]] std::string escape(std::string_view field);

}  // namespace faircl::csv
