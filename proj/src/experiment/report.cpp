#include "faircl/experiment/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>

#include "faircl/continual/training.hpp"
#include "faircl/csv.hpp"
#include "faircl/error.hpp"
#include "faircl/fairness/fairness.hpp"

namespace faircl {

namespace fs = std::filesystem;

std::vector<Mark> mark_column(const std::vector<std::optional<double>>& values) {
    std::set<double, std::greater<>> distinct;
    for (const auto& v : values) {
        if (v) distinct.insert(*v);
    }
    std::vector<Mark> marks(values.size(), Mark::none);
    if (distinct.empty()) return marks;
    const double best = *distinct.begin();
    const bool has_second = distinct.size() > 1;
    const double second = has_second ? *std::next(distinct.begin()) : best;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i]) continue;
        if (*values[i] == best) marks[i] = Mark::best;
        else if (has_second && *values[i] == second) marks[i] = Mark::second;
    }
    return marks;
}

std::string method_group(const std::string& method) {
    if (method == "finetune" || method == "offline") return "baseline";
    if (method == "ddc" || method == "dic" || method == "strategic_sampling") return "non-CL";
    if (method == "ewc" || method == "ewc_online" || method == "si" || method == "mas" || method == "naive_rehearsal") {
        return "CL";
    }
    return "other";
}

namespace {

double parse_value(const std::string& text, const fs::path& file, std::size_t line) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || p != text.data() + text.size()) {
        throw ValidationError(file.string() + ":" + std::to_string(line) + ": bad number '" + text + "'");
    }
    return v;
}

std::size_t method_rank(const std::string& m) {
    try {
        return static_cast<std::size_t>(parse_method(m));
    } catch (const ValidationError&) {
        return all_methods().size();
    }
}

/// Loads `name` from every directory and collects (method, column) -> value.
ReportMatrix collect(const std::vector<fs::path>& runs, const std::string& name, const std::string& title,
                     const std::vector<std::string>& key_columns, const std::string& value_column) {
    std::map<std::string, std::map<std::string, double>> cells;
    std::vector<std::string> column_order;
    bool any = false;
    for (const auto& dir : runs) {
        const auto file = dir / name;
        if (!fs::exists(file)) continue;
        std::ifstream in(file);
        const auto table = csv::read(in);
        const auto c_method = table.column("method");
        const auto c_value = table.column(value_column);
        std::vector<std::size_t> keys;
        for (const auto& k : key_columns) keys.push_back(table.column(k));
        const auto npos = static_cast<std::size_t>(-1);
        if (c_method == npos || c_value == npos || std::count(keys.begin(), keys.end(), npos)) {
            throw ValidationError(file.string() + ": unexpected header");
        }
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto& row = table.rows[r];
            std::string col;
            for (std::size_t k = 0; k < keys.size(); ++k) {
                const auto& part = row[keys[k]];
                if (key_columns[k] == "task" && part == "expression") continue;
                if (!col.empty()) col += ' ';
                col += part;
            }
            if (std::find(column_order.begin(), column_order.end(), col) == column_order.end()) {
                column_order.push_back(col);
            }
            cells[row[c_method]][col] = parse_value(row[c_value], file, table.line_numbers[r]);
            any = true;
        }
    }
    if (!any) throw ValidationError("no results found in the given runs directories");
    ReportMatrix m;
    m.title = title;
    m.columns = column_order;
    std::vector<std::string> methods;
    for (const auto& [method, _] : cells) methods.push_back(method);
    const std::map<std::string, int> group_rank{{"baseline", 0}, {"non-CL", 1}, {"CL", 2}, {"other", 3}};
    std::stable_sort(methods.begin(), methods.end(), [&](const auto& a, const auto& b) {
        const int ga = group_rank.at(method_group(a)), gb = group_rank.at(method_group(b));
        if (ga != gb) return ga < gb;
        const auto ra = method_rank(a), rb = method_rank(b);
        return ra != rb ? ra < rb : a < b;
    });
    for (const auto& method : methods) {
        ReportMatrix::Row row;
        row.method = method;
        row.group = method_group(method);
        for (const auto& col : m.columns) {
            auto it = cells[method].find(col);
            row.values.push_back(it == cells[method].end() ? std::nullopt : std::optional<double>(it->second));
        }
        m.rows.push_back(std::move(row));
    }
    for (auto& row : m.rows) row.marks.assign(m.columns.size(), Mark::none);
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
        std::vector<std::optional<double>> column;
        for (const auto& row : m.rows) column.push_back(row.values[c]);
        const auto marks = mark_column(column);
        for (std::size_t r = 0; r < m.rows.size(); ++r) m.rows[r].marks[c] = marks[r];
    }
    return m;
}

std::string cell_text(const std::optional<double>& v, Mark mark) {
    if (!v) return "-";
    const auto s = format_fixed4(*v);
    switch (mark) {
        case Mark::best: return s + "*";
        case Mark::second: return "[" + s + "]";
        case Mark::none: return s;
    }
    return s;
}

}  // namespace

ReportMatrix fairness_matrix(const std::vector<fs::path>& runs) {
    return collect(runs, "fairness.csv", "Fairness", {"attribute", "task"}, "fairness_mean");
}

ReportMatrix accuracy_matrix(const std::vector<fs::path>& runs) {
    return collect(runs, "accuracy.csv", "Accuracy", {"attribute", "domain", "task"}, "accuracy_mean");
}

void render_text(std::ostream& os, const ReportMatrix& m) {
    std::size_t method_w = 6;
    for (const auto& r : m.rows) method_w = std::max(method_w, r.method.size());
    std::vector<std::size_t> widths;
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
        std::size_t w = m.columns[c].size();
        for (const auto& r : m.rows) w = std::max(w, cell_text(r.values[c], r.marks[c]).size());
        widths.push_back(w);
    }
    os << m.title << '\n';
    os << std::left << std::setw(static_cast<int>(method_w)) << "method";
    for (std::size_t c = 0; c < m.columns.size(); ++c) os << "  " << std::setw(static_cast<int>(widths[c])) << m.columns[c];
    os << '\n';
    std::string group;
    for (const auto& r : m.rows) {
        if (r.group != group) {
            group = r.group;
            os << "-- " << group << '\n';
        }
        os << std::setw(static_cast<int>(method_w)) << r.method;
        for (std::size_t c = 0; c < m.columns.size(); ++c) {
            os << "  " << std::setw(static_cast<int>(widths[c])) << cell_text(r.values[c], r.marks[c]);
        }
        os << '\n';
    }
    os << std::right;
}

void render_csv(std::ostream& os, const ReportMatrix& m) {
    os << "table,group,method";
    for (const auto& c : m.columns) os << ',' << csv::escape(c);
    os << '\n';
    for (const auto& r : m.rows) {
        os << csv::escape(m.title) << ',' << r.group << ',' << csv::escape(r.method);
        for (std::size_t c = 0; c < m.columns.size(); ++c) os << ',' << csv::escape(cell_text(r.values[c], r.marks[c]));
        os << '\n';
    }
}

}  // namespace faircl
