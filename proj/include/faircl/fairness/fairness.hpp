#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "faircl/error.hpp"
#include "faircl/task.hpp"

namespace faircl {

enum class AttributeKind { gender, race, custom };

[[nodiscard]] std::string_view attribute_kind_name(AttributeKind kind) noexcept;
[[nodiscard]] AttributeKind parse_attribute_kind(std::string_view text) noexcept;

struct EvaluationRecord {
    Label prediction;
    Label truth;
    std::string domain;  // sensitive attribute value, e.g. "Female"
    AttributeKind attribute = AttributeKind::custom;
};

/// Correct and total predictions behind one accuracy entry.
struct HitCount {
    std::size_t correct = 0;
    std::size_t total = 0;

    friend bool operator==(const HitCount&, const HitCount&) = default;
};

/// Accuracy per domain for one task (the expression task, or one AU).
struct AccuracyTable {
    std::map<std::string, double> entries;
    /// Same keys as `entries` when built from records; empty otherwise.
    std::map<std::string, HitCount> counts;
    std::string dominant;  // highest accuracy; ties -> lexicographically smallest
    std::string task;      // "expression" or "au<k>" (1-based)

    /// Builds a table and fills `dominant`. Requires at least one entry.
    static AccuracyTable from(std::map<std::string, double> entries, std::string task);
    /// As `from`, keeping the counts so ratios can be formed exactly.
    static AccuracyTable from_counts(std::map<std::string, HitCount> counts, std::string task);
};

/// Raised when every domain has zero accuracy, so no ratio exists.
class UndefinedFairnessError : public Error {
public:
    using Error::Error;
};

/// Expression records give one table; AU records give one table per unit.
/// Records must be non-empty and of a single label kind. When
/// `expected_domains` is given, a listed domain without records raises
/// ValidationError naming it.
[[nodiscard]] std::vector<AccuracyTable> per_domain_accuracy(
    std::span<const EvaluationRecord> records, const std::vector<std::string>& expected_domains = {});

/// min over domains of acc(s) / acc(dominant). With counts, each ratio is
/// (c_s n_top) / (n_s c_top) in integers, rounded once.
[[nodiscard]] double fairness_score(const AccuracyTable& table);

struct UnitFairness {
    std::vector<double> per_unit;
    double mean = 0.0;
};

/// Fairness per AU table and their arithmetic mean. Tables must share the
/// same domain set.
[[nodiscard]] UnitFairness au_fairness_mean(std::span<const AccuracyTable> tables);

/// Mean and sample standard deviation (n-1) of per-seed values.
struct Stat {
    double mean = 0.0;
    double sd = 0.0;
    std::vector<double> samples;

    static Stat of(std::vector<double> samples);
};

struct FairnessReport {
    std::string attribute;
    TaskKind task = TaskKind::expression;
    Stat fairness;                      // F; for AU the mean over units
    std::vector<Stat> unit_fairness;    // AU only
    std::vector<std::string> tables;    // task name per accuracy table
    std::vector<std::map<std::string, Stat>> accuracy;  // per table: domain -> accuracy

    [[nodiscard]] std::size_t seed_count() const noexcept { return fairness.samples.size(); }
};

/// Single-run report from its accuracy tables.
[[nodiscard]] FairnessReport make_report(std::string attribute, TaskKind task,
                                         const std::vector<AccuracyTable>& tables);

/// Element-wise mean/sd over runs; structures must match.
[[nodiscard]] FairnessReport aggregate_seeds(std::span<const FairnessReport> reports);

struct MethodReport {
    std::string method;
    FairnessReport report;
};

/// `method,attribute,task,fairness_mean,fairness_sd,seeds`, 4 decimals.
void write_fairness_csv(std::ostream& os, std::span<const MethodReport> rows);
/// `method,attribute,domain,task,accuracy_mean,accuracy_sd`, 4 decimals.
void write_accuracy_csv(std::ostream& os, std::span<const MethodReport> rows);

[[nodiscard]] std::string format_fixed4(double v);

}  // namespace faircl
