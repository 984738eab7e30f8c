#include "faircl/fairness/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <set>

#include "faircl/csv.hpp"

namespace faircl {

std::string_view attribute_kind_name(AttributeKind kind) noexcept {
    switch (kind) {
        case AttributeKind::gender: return "gender";
        case AttributeKind::race: return "race";
        case AttributeKind::custom: return "custom";
    }
    return "custom";
}

AttributeKind parse_attribute_kind(std::string_view text) noexcept {
    if (text == "gender") return AttributeKind::gender;
    if (text == "race") return AttributeKind::race;
    return AttributeKind::custom;
}

AccuracyTable AccuracyTable::from(std::map<std::string, double> entries, std::string task) {
    if (entries.empty()) throw ValidationError("accuracy table: no domains");
    AccuracyTable t;
    t.entries = std::move(entries);
    t.task = std::move(task);
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = t.entries.begin();
    for (auto it = t.entries.begin(); it != t.entries.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    t.dominant = best->first;
    return t;
}

AccuracyTable AccuracyTable::from_counts(std::map<std::string, HitCount> counts, std::string task) {
    std::map<std::string, double> entries;
    for (const auto& [domain, c] : counts) {
        if (c.total == 0 || c.correct > c.total) {
            throw ValidationError("accuracy table: domain '" + domain + "' has " + std::to_string(c.correct) + " of " +
                                  std::to_string(c.total) + " correct");
        }
        entries[domain] = static_cast<double>(c.correct) / static_cast<double>(c.total);
    }
    auto t = from(std::move(entries), std::move(task));
    t.counts = std::move(counts);
    return t;
}

std::vector<AccuracyTable> per_domain_accuracy(std::span<const EvaluationRecord> records,
                                               const std::vector<std::string>& expected_domains) {
    if (records.empty()) throw ValidationError("per_domain_accuracy: no records");
    const bool expression = is_class_label(records.front().truth);
    std::size_t units = expression ? 0 : units_of(records.front().truth).size();

    std::map<std::string, std::size_t> total;
    std::map<std::string, std::vector<std::size_t>> correct;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.domain.empty()) throw ValidationError("per_domain_accuracy: record " + std::to_string(r) + " has no domain");
        if (is_class_label(rec.truth) != expression || is_class_label(rec.prediction) != expression) {
            throw ValidationError("per_domain_accuracy: record " + std::to_string(r) + " mixes label kinds");
        }
        auto& hits = correct[rec.domain];
        total[rec.domain] += 1;
        if (expression) {
            hits.resize(1, 0);
            if (class_of(rec.prediction) == class_of(rec.truth)) ++hits[0];
        } else {
            const auto& p = units_of(rec.prediction);
            const auto& t = units_of(rec.truth);
            if (p.size() != units || t.size() != units) {
                throw ValidationError("per_domain_accuracy: record " + std::to_string(r) + " has " +
                                      std::to_string(t.size()) + " units, expected " + std::to_string(units));
            }
            hits.resize(units, 0);
            for (std::size_t a = 0; a < units; ++a) {
                if (p[a] == t[a]) ++hits[a];
            }
        }
    }
    for (const auto& d : expected_domains) {
        if (!total.count(d)) throw ValidationError("per_domain_accuracy: domain '" + d + "' has no records");
    }

    const std::size_t tables = expression ? 1 : units;
    std::vector<AccuracyTable> out;
    out.reserve(tables);
    for (std::size_t k = 0; k < tables; ++k) {
        std::map<std::string, HitCount> counts;
        for (const auto& [domain, n] : total) counts[domain] = HitCount{correct[domain][k], n};
        out.push_back(AccuracyTable::from_counts(std::move(counts), expression ? "expression" : "au" + std::to_string(k + 1)));
    }
    return out;
}

double fairness_score(const AccuracyTable& table) {
    if (table.entries.empty()) throw ValidationError("fairness_score: empty table");
    const double top = table.entries.at(table.dominant);
    if (!(top > 0.0)) {
        throw UndefinedFairnessError("fairness_score: dominant domain '" + table.dominant + "' has zero accuracy");
    }
    double worst = 1.0;
    if (!table.counts.empty()) {
        // Integer products stay exact in a double below 2^53.
        constexpr std::uint64_t exact = std::uint64_t{1} << 53;
        const auto& t = table.counts.at(table.dominant);
        bool fits = true;
        for (const auto& [domain, c] : table.counts) {
            fits = fits && c.correct <= exact / std::max<std::size_t>(t.total, 1) &&
                   c.total <= exact / std::max<std::size_t>(t.correct, 1);
        }
        if (fits) {
            for (const auto& [domain, c] : table.counts) {
                const auto num = static_cast<double>(c.correct * t.total);
                const auto den = static_cast<double>(c.total * t.correct);
                worst = std::min(worst, num / den);
            }
            return worst;
        }
    }
    for (const auto& [domain, acc] : table.entries) worst = std::min(worst, acc / top);
    return worst;
}

UnitFairness au_fairness_mean(std::span<const AccuracyTable> tables) {
    if (tables.empty()) throw ValidationError("au_fairness_mean: no tables");
    UnitFairness out;
    for (const auto& t : tables) {
        if (t.entries.size() != tables.front().entries.size() ||
            !std::equal(t.entries.begin(), t.entries.end(), tables.front().entries.begin(),
                        [](const auto& a, const auto& b) { return a.first == b.first; })) {
            throw ValidationError("au_fairness_mean: table '" + t.task + "' has a different domain set");
        }
        out.per_unit.push_back(fairness_score(t));
    }
    out.mean = std::accumulate(out.per_unit.begin(), out.per_unit.end(), 0.0) /
               static_cast<double>(out.per_unit.size());
    return out;
}

Stat Stat::of(std::vector<double> samples) {
    Stat s;
    s.samples = std::move(samples);
    if (s.samples.empty()) return s;
    const double n = static_cast<double>(s.samples.size());
    s.mean = std::accumulate(s.samples.begin(), s.samples.end(), 0.0) / n;
    if (s.samples.size() > 1) {
        double ss = 0.0;
        for (double v : s.samples) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

FairnessReport make_report(std::string attribute, TaskKind task, const std::vector<AccuracyTable>& tables) {
    if (tables.empty()) throw ValidationError("make_report: no accuracy tables");
    FairnessReport r;
    r.attribute = std::move(attribute);
    r.task = task;
    if (task == TaskKind::action_units) {
        const auto uf = au_fairness_mean(tables);
        r.fairness = Stat::of({uf.mean});
        for (double f : uf.per_unit) r.unit_fairness.push_back(Stat::of({f}));
    } else {
        if (tables.size() != 1) throw ValidationError("make_report: expression task takes exactly one table");
        r.fairness = Stat::of({fairness_score(tables.front())});
    }
    for (const auto& t : tables) {
        r.tables.push_back(t.task);
        std::map<std::string, Stat> acc;
        for (const auto& [d, v] : t.entries) acc[d] = Stat::of({v});
        r.accuracy.push_back(std::move(acc));
    }
    return r;
}

FairnessReport aggregate_seeds(std::span<const FairnessReport> reports) {
    if (reports.empty()) throw ValidationError("aggregate_seeds: no reports");
    const auto& first = reports.front();
    auto mismatch = [](const std::string& what) { throw ValidationError("aggregate_seeds: mismatched " + what); };
    for (const auto& r : reports) {
        if (r.attribute != first.attribute) mismatch("attribute");
        if (r.task != first.task) mismatch("task");
        if (r.unit_fairness.size() != first.unit_fairness.size()) mismatch("unit count");
        if (r.tables != first.tables) mismatch("tables");
        for (std::size_t t = 0; t < r.accuracy.size(); ++t) {
            if (r.accuracy[t].size() != first.accuracy[t].size() ||
                !std::equal(r.accuracy[t].begin(), r.accuracy[t].end(), first.accuracy[t].begin(),
                            [](const auto& a, const auto& b) { return a.first == b.first; })) {
                mismatch("domains in table '" + r.tables[t] + "'");
            }
        }
    }
    auto gather = [&](auto&& get) {
        std::vector<double> v;
        for (const auto& r : reports) {
            const Stat& s = get(r);
            v.insert(v.end(), s.samples.begin(), s.samples.end());
        }
        return Stat::of(std::move(v));
    };
    FairnessReport out;
    out.attribute = first.attribute;
    out.task = first.task;
    out.tables = first.tables;
    out.fairness = gather([](const FairnessReport& r) -> const Stat& { return r.fairness; });
    for (std::size_t u = 0; u < first.unit_fairness.size(); ++u) {
        out.unit_fairness.push_back(gather([u](const FairnessReport& r) -> const Stat& { return r.unit_fairness[u]; }));
    }
    for (std::size_t t = 0; t < first.accuracy.size(); ++t) {
        std::map<std::string, Stat> acc;
        for (const auto& [d, unused] : first.accuracy[t]) {
            acc[d] = gather([t, &d](const FairnessReport& r) -> const Stat& { return r.accuracy[t].at(d); });
        }
        out.accuracy.push_back(std::move(acc));
    }
    return out;
}

std::string format_fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    std::string s = buf;
    if (s == "-0.0000") s = "0.0000";
    return s;
}

void write_fairness_csv(std::ostream& os, std::span<const MethodReport> rows) {
    os << "method,attribute,task,fairness_mean,fairness_sd,seeds\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        os << csv::escape(row.method) << ',' << csv::escape(r.attribute) << ',' << task_name(r.task) << ','
           << format_fixed4(r.fairness.mean) << ',' << format_fixed4(r.fairness.sd) << ',' << r.seed_count() << '\n';
    }
}

void write_accuracy_csv(std::ostream& os, std::span<const MethodReport> rows) {
    os << "method,attribute,domain,task,accuracy_mean,accuracy_sd\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::set<std::string> domains;
        for (const auto& t : r.accuracy)
            for (const auto& [d, s] : t) domains.insert(d);
        for (const auto& d : domains) {
            for (std::size_t t = 0; t < r.accuracy.size(); ++t) {
                const auto& s = r.accuracy[t].at(d);
                os << csv::escape(row.method) << ',' << csv::escape(r.attribute) << ',' << csv::escape(d) << ','
                   << r.tables[t] << ',' << format_fixed4(s.mean) << ',' << format_fixed4(s.sd) << '\n';
            }
        }
    }
}

}  // namespace faircl
