#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "faircl/fairness/fairness.hpp"
#include "faircl/rng.hpp"

using namespace faircl;

namespace {

/// Non-negative rational in lowest terms.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
        const auto g = std::gcd(num, den);
        num /= g;
        den /= g;
    }
    friend bool operator==(const Rational& a, const Rational& b) { return a.num == b.num && a.den == b.den; }
    friend bool operator<(const Rational& a, const Rational& b) { return a.num * b.den < b.num * a.den; }
    friend Rational operator/(const Rational& a, const Rational& b) { return {a.num * b.den, a.den * b.num}; }
    [[nodiscard]] double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

EvaluationRecord record(std::size_t pred, std::size_t truth, std::string domain) {
    return {Label{pred}, Label{truth}, std::move(domain), AttributeKind::custom};
}

/// Records with exactly `correct` of `total` right for `domain`.
void add_records(std::vector<EvaluationRecord>& out, const std::string& domain, std::size_t correct, std::size_t total) {
    for (std::size_t i = 0; i < total; ++i) out.push_back(record(i < correct ? 1 : 0, 1, domain));
}

AccuracyTable table_of(std::map<std::string, double> entries) { return AccuracyTable::from(std::move(entries), "expression"); }

}  // namespace

TEST_SUITE("per-domain accuracy") {
    TEST_CASE("counting example") {
        std::vector<EvaluationRecord> recs{record(0, 0, "a"), record(1, 1, "a"), record(1, 0, "b"), record(0, 0, "b")};
        const auto tables = per_domain_accuracy(recs);
        REQUIRE(tables.size() == 1);
        CHECK(tables[0].entries.at("a") == 1.0);
        CHECK(tables[0].entries.at("b") == 0.5);
        CHECK(tables[0].dominant == "a");
        CHECK(tables[0].counts.at("b") == HitCount{1, 2});
    }

    TEST_CASE("all correct") {
        std::vector<EvaluationRecord> recs;
        for (std::size_t i = 0; i < 30; ++i) recs.push_back(record(i % 7, i % 7, i % 3 ? "x" : "y"));
        const auto tables = per_domain_accuracy(recs);
        for (const auto& [d, v] : tables.front().entries) CHECK(v == 1.0);
    }

    TEST_CASE("random records match a brute-force counter") {
        Rng rng(1);
        const std::vector<std::string> names{"Female", "Male", "Other"};
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<EvaluationRecord> recs;
            for (int i = 0; i < 200; ++i) {
                recs.push_back(record(uniform_index(rng, 4), uniform_index(rng, 4), names[uniform_index(rng, 3)]));
            }
            const auto got = per_domain_accuracy(recs).front();
            for (const auto& name : names) {
                std::size_t hit = 0, n = 0;
                for (const auto& r : recs) {
                    if (r.domain != name) continue;
                    ++n;
                    hit += class_of(r.prediction) == class_of(r.truth);
                }
                if (n == 0) continue;
                CHECK(got.entries.at(name) == static_cast<double>(hit) / static_cast<double>(n));
            }
        }
    }

    TEST_CASE("au records give one table per unit") {
        std::vector<EvaluationRecord> recs;
        using Bits = std::vector<std::uint8_t>;
        recs.push_back({Label{Bits{1, 0, 1}}, Label{Bits{1, 1, 1}}, "a", AttributeKind::gender});
        recs.push_back({Label{Bits{0, 0, 1}}, Label{Bits{1, 0, 0}}, "b", AttributeKind::gender});
        const auto tables = per_domain_accuracy(recs);
        REQUIRE(tables.size() == 3);
        CHECK(tables[0].task == "au1");
        CHECK(tables[1].entries.at("a") == 0.0);
        CHECK(tables[1].entries.at("b") == 1.0);
        CHECK(tables[2].entries.at("b") == 0.0);
    }

    TEST_CASE("errors") {
        CHECK_THROWS_AS((void)per_domain_accuracy({}), ValidationError);
        std::vector<EvaluationRecord> recs{record(0, 0, "a")};
        try {
            (void)per_domain_accuracy(recs, {"a", "b"});
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("'b'") != std::string::npos);
        }
        recs.push_back({Label{std::vector<std::uint8_t>{1}}, Label{std::vector<std::uint8_t>{1}}, "a", AttributeKind::custom});
        CHECK_THROWS_AS((void)per_domain_accuracy(recs), ValidationError);
    }
}

TEST_SUITE("fairness score") {
    TEST_CASE("0.72 against 0.9") {
        // From rates the division carries one rounding of its inputs.
        const double f = fairness_score(table_of({{"male", 0.9}, {"female", 0.72}}));
        CHECK(std::abs(f - 0.8) <= std::numeric_limits<double>::epsilon());
        // From counts the ratio is exact: 72/100 over 81/90.
        std::vector<EvaluationRecord> recs;
        add_records(recs, "male", 81, 90);
        add_records(recs, "female", 72, 100);
        const auto t = per_domain_accuracy(recs).front();
        CHECK(t.entries.at("male") == 0.9);
        CHECK(t.entries.at("female") == 0.72);
        CHECK(fairness_score(t) == 0.8);
    }

    TEST_CASE("spec examples") {
        CHECK(fairness_score(table_of({{"a", 0.5}, {"b", 0.5}, {"c", 0.5}})) == 1.0);
        CHECK(fairness_score(table_of({{"w", 0.5}, {"b", 0.4}, {"a", 0.25}})) == 0.5);
    }

    TEST_CASE("zero accuracy everywhere is undefined") {
        CHECK_THROWS_AS((void)fairness_score(table_of({{"a", 0.0}, {"b", 0.0}})), UndefinedFairnessError);
        CHECK(fairness_score(table_of({{"a", 0.0}, {"b", 0.5}})) == 0.0);
    }

    TEST_CASE("dominant ties go to the lexicographically smallest domain") {
        CHECK(table_of({{"b", 0.7}, {"a", 0.7}, {"c", 0.2}}).dominant == "a");
    }

    TEST_CASE("exact rationals: F is the rational min/max, and F == 1 iff all accuracies are equal") {
        Rng rng(2);
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t k = 2 + uniform_index(rng, 3);
            std::vector<EvaluationRecord> recs;
            std::vector<Rational> acc;
            const bool force_equal = trial % 4 == 0;
            const std::size_t base_total = 1 + uniform_index(rng, 12);
            const std::size_t base_correct = 1 + uniform_index(rng, base_total);
            for (std::size_t d = 0; d < k; ++d) {
                std::size_t total, correct;
                if (force_equal) {
                    const std::size_t mult = 1 + uniform_index(rng, 4);
                    total = base_total * mult;
                    correct = base_correct * mult;
                } else {
                    total = 1 + uniform_index(rng, 20);
                    correct = uniform_index(rng, total + 1);
                }
                add_records(recs, "d" + std::to_string(d), correct, total);
                acc.emplace_back(static_cast<std::int64_t>(correct), static_cast<std::int64_t>(total));
            }
            const Rational top = *std::max_element(acc.begin(), acc.end());
            if (top.num == 0) continue;
            const Rational low = *std::min_element(acc.begin(), acc.end());
            const Rational expect = low / top;
            const double f = fairness_score(per_domain_accuracy(recs).front());
            CHECK(f == expect.value());
            const bool all_equal = std::all_of(acc.begin(), acc.end(), [&](const Rational& r) { return r == acc[0]; });
            CHECK((f == 1.0) == all_equal);
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
    }

    TEST_CASE("invariant under permutation and renaming of domains") {
        Rng rng(3);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> acc;
            for (std::size_t d = 0, k = 2 + uniform_index(rng, 4); d < k; ++d) acc.push_back(uniform(rng, 0.05, 1.0));
            std::map<std::string, double> a, b;
            for (std::size_t d = 0; d < acc.size(); ++d) a["g" + std::to_string(d)] = acc[d];
            std::vector<double> shuffled = acc;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            for (std::size_t d = 0; d < shuffled.size(); ++d) b[std::string(1, static_cast<char>('z' - d)) + "_renamed"] = shuffled[d];
            CHECK(fairness_score(table_of(a)) == fairness_score(table_of(b)));
        }
    }

    TEST_CASE("scaling every accuracy leaves F unchanged") {
        Rng rng(4);
        for (int trial = 0; trial < 200; ++trial) {
            std::map<std::string, double> a, scaled;
            const double c = uniform(rng, 0.1, 1.0);
            for (std::size_t d = 0; d < 3; ++d) {
                const double v = uniform(rng, 0.05, 1.0);
                a["d" + std::to_string(d)] = v;
                scaled["d" + std::to_string(d)] = v * c;
            }
            CHECK(fairness_score(table_of(scaled)) == doctest::Approx(fairness_score(table_of(a))).epsilon(1e-12));
        }
    }

    TEST_CASE("adding domains: at the minimum or inside the range keeps F, a new maximum lowers it weakly") {
        Rng rng(5);
        for (int trial = 0; trial < 200; ++trial) {
            std::map<std::string, double> a;
            for (std::size_t d = 0; d < 3; ++d) a["d" + std::to_string(d)] = uniform(rng, 0.1, 0.9);
            const double f = fairness_score(table_of(a));
            double lo = 1.0, hi = 0.0;
            for (const auto& [d, v] : a) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            auto with = [&](double v) {
                auto b = a;
                b["new"] = v;
                return fairness_score(table_of(b));
            };
            CHECK(with(lo) == f);
            CHECK(with(uniform(rng, lo, hi)) == f);
            CHECK(with(uniform(rng, hi, 1.0)) <= f);
        }
    }
}

TEST_SUITE("action units") {
    TEST_CASE("mean over units") {
        const std::vector<AccuracyTable> tables{table_of({{"a", 1.0}, {"b", 0.8}}), table_of({{"a", 0.6}, {"b", 0.6}})};
        const auto uf = au_fairness_mean(tables);
        CHECK(uf.per_unit == std::vector<double>{0.8, 1.0});
        CHECK(uf.mean == doctest::Approx(0.9).epsilon(1e-15));
        const std::vector<AccuracyTable> fair{table_of({{"a", 0.7}, {"b", 0.7}}), table_of({{"a", 0.2}, {"b", 0.2}})};
        CHECK(au_fairness_mean(fair).mean == 1.0);
    }

    TEST_CASE("twelve random units match an independent recomputation") {
        Rng rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<AccuracyTable> tables;
            double sum = 0.0;
            for (int u = 0; u < 12; ++u) {
                std::map<std::string, double> e;
                double lo = 1.0, hi = 0.0;
                for (const char* d : {"Asian", "Black", "White"}) {
                    const double v = uniform(rng, 0.3, 1.0);
                    e[d] = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                sum += lo / hi;
                tables.push_back(AccuracyTable::from(e, "au" + std::to_string(u + 1)));
            }
            CHECK(au_fairness_mean(tables).mean == doctest::Approx(sum / 12.0).epsilon(1e-12));
        }
    }

    TEST_CASE("tables over different domains are rejected") {
        const std::vector<AccuracyTable> tables{table_of({{"a", 1.0}, {"b", 0.8}}), table_of({{"a", 0.6}, {"c", 0.6}})};
        CHECK_THROWS_AS((void)au_fairness_mean(tables), ValidationError);
    }
}

TEST_SUITE("seed aggregation") {
    FairnessReport single(double f) {
        FairnessReport r;
        r.attribute = "gender";
        r.fairness = Stat::of({f});
        r.tables = {"expression"};
        r.accuracy = {{{"a", Stat::of({f})}}};
        return r;
    }

    TEST_CASE("identical seeds") {
        const std::vector<FairnessReport> reps{single(0.99), single(0.99), single(0.99)};
        const auto agg = aggregate_seeds(reps);
        CHECK(agg.fairness.mean == doctest::Approx(0.99).epsilon(1e-15));
        CHECK(agg.fairness.sd == doctest::Approx(0.0));
        CHECK(agg.seed_count() == 3);
    }

    TEST_CASE("single seed") {
        const std::vector<FairnessReport> reps{single(0.7)};
        const auto agg = aggregate_seeds(reps);
        CHECK(agg.fairness.mean == 0.7);
        CHECK(agg.fairness.sd == 0.0);
    }

    TEST_CASE("sample standard deviation") {
        const std::vector<FairnessReport> reps{single(0.8), single(1.0)};
        const auto agg = aggregate_seeds(reps);
        CHECK(agg.fairness.mean == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(agg.fairness.sd == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
        CHECK(format_fixed4(agg.fairness.sd) == "0.1414");
        CHECK(agg.accuracy[0].at("a").mean == doctest::Approx(0.9).epsilon(1e-15));
    }

    TEST_CASE("mismatched reports are rejected") {
        auto other = single(0.5);
        other.attribute = "race";
        const std::vector<FairnessReport> reps{single(0.8), other};
        CHECK_THROWS_AS((void)aggregate_seeds(reps), ValidationError);
    }
}

TEST_SUITE("csv export") {
    TEST_CASE("headers and four decimals") {
        std::vector<EvaluationRecord> recs;
        add_records(recs, "Female", 2, 3);
        add_records(recs, "Male", 3, 3);
        const auto tables = per_domain_accuracy(recs);
        const std::vector<MethodReport> rows{{"si", make_report("gender", TaskKind::expression, tables)}};
        std::ostringstream f, a;
        write_fairness_csv(f, rows);
        write_accuracy_csv(a, rows);
        CHECK(f.str() == "method,attribute,task,fairness_mean,fairness_sd,seeds\nsi,gender,expression,0.6667,0.0000,1\n");
        CHECK(a.str() ==
              "method,attribute,domain,task,accuracy_mean,accuracy_sd\n"
              "si,gender,Female,expression,0.6667,0.0000\n"
              "si,gender,Male,expression,1.0000,0.0000\n");
        CHECK(format_fixed4(-0.00001) == "0.0000");
    }
}
