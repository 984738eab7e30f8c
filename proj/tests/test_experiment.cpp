#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "faircl/csv.hpp"
#include "faircl/experiment/commands.hpp"
#include "faircl/experiment/config.hpp"
#include "faircl/experiment/report.hpp"
#include "faircl/experiment/runner.hpp"
#include "support.hpp"

using namespace faircl;
using nlohmann::json;
using test::TempDir;
namespace fs = std::filesystem;

namespace {

json tiny_config(const fs::path& out, json methods = {"finetune", "si"}) {
    return {{"dataset", {{"synth", {{"samples", 400}, {"seed", 3}}}}},
            {"methods", std::move(methods)},
            {"seeds", {1, 2, 3}},
            {"model", {{"hidden", {8}}, {"dense_dropout", 0.0}}},
            {"training", {{"epochs", 2}, {"batch_size", 16}}},
            {"output", out.string()}};
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    test::write_file(p, j.dump(2));
    return p;
}

std::string config_error(const json& j) {
    try {
        (void)parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

/// Rows of a CSV file as column-name maps.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
    std::istringstream in(test::read_file(p));
    std::string line;
    std::getline(in, line);
    const auto header = csv::split_line(line);
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        const auto cells = csv::split_line(line);
        REQUIRE(cells.size() == header.size());
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<json> read_records(const fs::path& out) {
    std::vector<json> recs;
    for (const auto& e : fs::directory_iterator(out / "runs")) {
        std::ifstream in(e.path() / "record.json");
        recs.push_back(json::parse(in));
    }
    return recs;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// Mean and sample standard deviation.
std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

RunFlags flags_for(const fs::path& config) {
    RunFlags f;
    f.config = config;
    return f;
}

int run_cli(const std::string& args, std::string* stdout_text = nullptr) {
    static int n = 0;
    const fs::path capture = fs::temp_directory_path() / ("faircl_cli_" + std::to_string(++n) + ".txt");
    const std::string cmd = std::string(FAIRCL_CLI) + " " + args + " > " + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (stdout_text) *stdout_text = test::read_file(capture);
    fs::remove(capture);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("errors name the field") {
        const json base = tiny_config("out");
        auto with = [&](const std::string& key, json v) {
            json j = base;
            j[key] = std::move(v);
            return j;
        };
        CHECK(config_error(base).empty());
        CHECK(config_error(with("methods", {"finetune", "lwf"})).find("methods[1]") != std::string::npos);
        CHECK(config_error(with("methods", {"si", "si"})).find("duplicate method") != std::string::npos);
        CHECK(config_error(with("seeds", json::array())).find("seeds") != std::string::npos);
        CHECK(config_error(with("seeds", {1, -2})).find("seeds[1]") != std::string::npos);
        CHECK(config_error(with("training", {{"epochs", 2.5}})).find("training.epochs") != std::string::npos);
        CHECK(config_error(with("training", {{"epochs", 0}})).find("training.epochs") != std::string::npos);
        CHECK(config_error(with("training", {{"optimizer", "rmsprop"}})).find("training.optimizer") != std::string::npos);
        CHECK(config_error(with("model", {{"backbone", "resnet"}})).find("model.backbone") != std::string::npos);
        CHECK(config_error(with("colour", 1)).find("colour: unknown field") != std::string::npos);
        CHECK(config_error(with("augmentation", "sometimes")).find("augmentation") != std::string::npos);
        CHECK(config_error(with("methods", {{{"name", "finetune"}, {"sweep", {1.0}}}})).find("sweep") !=
              std::string::npos);
        CHECK(config_error(with("dataset", json::object())).find("dataset") != std::string::npos);
        CHECK(config_error(with("dataset", {{"synth", {{"ratios", {0.5, 0.4}}}}})).find("dataset") != std::string::npos);
    }

    TEST_CASE("invalid configs exit with status 2") {
        TempDir dir("cfg");
        json j = tiny_config(dir.path() / "out");
        j["training"]["learning_rate"] = -1.0;
        std::ostringstream out, err;
        CHECK(cmd_run(flags_for(write_config(dir.path(), j)), out, err) == kExitUsage);
        CHECK(err.str().find("training.learning_rate") != std::string::npos);
        CHECK_FALSE(fs::exists(dir.path() / "out"));

        std::string text;
        CHECK(run_cli("run --config " + (dir.path() / "missing.json").string(), &text) == kExitUsage);
        CHECK(run_cli("frobnicate", &text) == kExitUsage);
    }

    TEST_CASE("cell hashes depend only on what shapes the result") {
        const auto cfg = parse_config(tiny_config("a"));
        const auto& si = cfg.methods[1];
        const auto h = config_hash(cell_identity(cfg, si, false, 1));
        CHECK(h.size() == 16);
        CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
        CHECK(config_hash(cell_identity(parse_config(tiny_config("b")), si, false, 1)) == h);
        CHECK(config_hash(cell_identity(cfg, si, false, 2)) != h);
        CHECK(config_hash(cell_identity(cfg, si, true, 1)) != h);
        CHECK(config_hash(cell_identity(cfg, cfg.methods[0], false, 1)) != h);
        auto changed = tiny_config("a");
        changed["training"]["epochs"] = 3;
        CHECK(config_hash(cell_identity(parse_config(changed), si, false, 1)) != h);
        auto stronger = si;
        stronger.hyper.c = 2.0;
        CHECK(config_hash(cell_identity(cfg, stronger, false, 1)) != h);
    }

    TEST_CASE("the shipped benchmark config parses") {
        const auto cfg = load_config(test::source_dir() / "configs/synth_benchmark.json");
        CHECK(cfg.methods.size() == all_methods().size());
        CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
        CHECK(cfg.augmentation_flags() == std::vector<bool>{false});
    }
}

TEST_SUITE("grid") {
    TEST_CASE("records, CSVs and caching") {
        TempDir dir("grid");
        const fs::path out = dir.path() / "out";
        const auto cfg = parse_config(tiny_config(out));
        const auto first = run_grid(cfg, {});
        CHECK(first.trained == 6);
        CHECK(first.failed == 0);
        CHECK(fs::exists(out / "fairness.csv"));
        CHECK(fs::exists(out / "accuracy.csv"));
        CHECK(fs::exists(out / "manifest.json"));
        const auto recs = read_records(out);
        CHECK(recs.size() == 6);
        for (const auto& r : recs) CHECK(r.at("schema") == "faircl-run-record/1");

        const std::string fairness = test::read_file(out / "fairness.csv");
        const std::string manifest = test::read_file(out / "manifest.json");
        const auto second = run_grid(cfg, {});
        CHECK(second.cached == 6);
        CHECK(second.trained == 0);
        CHECK(test::read_file(out / "fairness.csv") == fairness);
        CHECK(test::read_file(out / "manifest.json") == manifest);
        for (std::size_t i = 0; i < first.cells.size(); ++i) {
            CHECK(second.cells[i].report.fairness.mean == first.cells[i].report.fairness.mean);
            CHECK(second.cells[i].tables.front().counts == first.cells[i].tables.front().counts);
        }

        RunOptions force;
        force.force = true;
        CHECK(run_grid(cfg, force).trained == 6);
        CHECK(test::read_file(out / "fairness.csv") == fairness);
    }

    TEST_CASE("CSV values recompute from the stored tables") {
        TempDir dir("recompute");
        const fs::path out = dir.path() / "out";
        (void)run_grid(parse_config(tiny_config(out)), {});
        std::map<std::string, std::vector<double>> fairness;
        std::map<std::string, std::map<std::string, std::vector<double>>> accuracy;
        for (const auto& r : read_records(out)) {
            const auto& table = r.at("tables").at(0);
            double lo = 1.0, hi = 0.0;
            std::map<std::string, double> acc;
            for (const auto& [d, c] : table.at("counts").items()) {
                const double a = c.at(0).get<double>() / c.at(1).get<double>();
                acc[d] = a;
                lo = std::min(lo, a);
                hi = std::max(hi, a);
                CHECK(a == table.at("entries").at(d).get<double>());
            }
            const std::string m = r.at("method");
            fairness[m].push_back(lo / hi);
            for (const auto& [d, a] : acc) accuracy[m][d].push_back(a);
        }
        const auto frows = read_csv(out / "fairness.csv");
        REQUIRE(frows.size() == 2);
        for (const auto& row : frows) {
            const auto [mean, sd] = mean_sd(fairness.at(row.at("method")));
            CHECK(row.at("fairness_mean") == fixed4(mean));
            CHECK(row.at("fairness_sd") == fixed4(sd));
            CHECK(row.at("seeds") == "3");
            CHECK(row.at("task") == "expression");
        }
        const auto arows = read_csv(out / "accuracy.csv");
        CHECK(arows.size() == 4);
        for (const auto& row : arows) {
            const auto [mean, sd] = mean_sd(accuracy.at(row.at("method")).at(row.at("domain")));
            CHECK(row.at("accuracy_mean") == fixed4(mean));
            CHECK(row.at("accuracy_sd") == fixed4(sd));
        }
    }

    TEST_CASE("failed cells are recorded and retried") {
        TempDir dir("failed");
        const fs::path out = dir.path() / "out";
        json j = tiny_config(out, {"finetune"});
        j["seeds"] = {1};
        j["model"]["backbone"] = "baseline_cnn";
        std::ostringstream log, err;
        CHECK(cmd_run(flags_for(write_config(dir.path(), j)), log, err) == kExitFailedCells);
        const auto manifest = json::parse(test::read_file(out / "manifest.json"));
        CHECK(manifest.at("failed") == 1);
        CHECK(manifest.at("cells").at(0).at("status") == "failed");
        CHECK_FALSE(manifest.at("cells").at(0).at("error").get<std::string>().empty());
        CHECK(read_csv(out / "fairness.csv").empty());
        CHECK(log.str().find("failed") != std::string::npos);
        const auto again = run_grid(parse_config(j), {});
        CHECK(again.cached == 0);
        CHECK(again.failed == 1);
    }

    TEST_CASE("record json round trip") {
        TempDir dir("record");
        const auto cfg = parse_config(tiny_config(dir.path()));
        const auto eps = load_episodes(cfg);
        const auto rec = run_cell(cfg, cfg.methods[1], false, 5, eps);
        const json j = record_to_json(rec);
        const auto back = record_from_json(j);
        CHECK(record_to_json(back) == j);
        CHECK(back.report.fairness.mean == rec.report.fairness.mean);
        json bad = j;
        bad["schema"] = "other/9";
        CHECK_THROWS_AS((void)record_from_json(bad), ValidationError);
    }

    TEST_CASE("sweeps pick a candidate by validation accuracy") {
        TempDir dir("sweep");
        const auto cfg = parse_config(tiny_config(dir.path(), {{{"name", "ewc"}, {"sweep", {0.0, 1e3}}}}));
        const auto eps = load_episodes(cfg);
        const auto rec = run_cell(cfg, cfg.methods[0], false, 1, eps);
        REQUIRE(rec.chosen);
        REQUIRE(rec.sweep_scores.size() == 2);
        const std::size_t best = rec.sweep_scores[1] > rec.sweep_scores[0] ? 1 : 0;
        CHECK(*rec.chosen == cfg.methods[0].sweep[best]);
        const auto val = validation_episodes(eps, 0.2, 1);
        for (std::size_t e = 0; e < eps.size(); ++e) {
            CHECK(val[e].train.size() + val[e].test.size() == eps[e].train.size());
        }
    }
}

TEST_SUITE("report") {
    TEST_CASE("marks agree with a sort") {
        Rng rng(4);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<std::optional<double>> col;
            const std::size_t n = 1 + uniform_index(rng, 8);
            for (std::size_t i = 0; i < n; ++i) {
                if (uniform_index(rng, 5) == 0) col.emplace_back();
                else col.emplace_back(static_cast<double>(uniform_index(rng, 4)) / 4.0);
            }
            std::vector<double> present;
            for (const auto& v : col)
                if (v) present.push_back(*v);
            std::sort(present.begin(), present.end(), std::greater<>());
            present.erase(std::unique(present.begin(), present.end()), present.end());
            const auto marks = mark_column(col);
            for (std::size_t i = 0; i < n; ++i) {
                Mark expected = Mark::none;
                if (col[i] && *col[i] == present[0]) expected = Mark::best;
                else if (col[i] && present.size() > 1 && *col[i] == present[1]) expected = Mark::second;
                CHECK(marks[i] == expected);
            }
        }
        CHECK(mark_column({0.5}) == std::vector<Mark>{Mark::best});
        CHECK(mark_column({std::nullopt}) == std::vector<Mark>{Mark::none});
    }

    TEST_CASE("tables from run directories") {
        TempDir dir("report");
        const fs::path out = dir.path() / "out";
        (void)run_grid(parse_config(tiny_config(out)), {});
        const auto m = fairness_matrix({out});
        REQUIRE(m.rows.size() == 2);
        CHECK(m.rows[0].method == "finetune");
        CHECK(m.rows[0].group == "baseline");
        CHECK(m.rows[1].group == "CL");
        std::ostringstream text;
        render_text(text, m);
        CHECK(text.str().find("*") != std::string::npos);
        std::ostringstream cli_out, err;
        CHECK(cmd_report({{out}, "csv"}, cli_out, err) == kExitOk);
        CHECK(cmd_report({{dir.path() / "nothing"}, "text"}, cli_out, err) == kExitUsage);
        CHECK(cmd_report({{out}, "xml"}, cli_out, err) == kExitUsage);
        CHECK(method_group("strategic_sampling") == "non-CL");
    }
}

TEST_SUITE("cli") {
    TEST_CASE("synth writes a loadable manifest") {
        TempDir dir("synth");
        const fs::path a = dir.path() / "a", b = dir.path() / "b";
        std::string text;
        REQUIRE(run_cli("synth --out " + a.string() + " --n 1000 --seed 5", &text) == 0);
        CHECK(text.find("d1: 800") != std::string::npos);
        CHECK(text.find("d2: 200") != std::string::npos);
        REQUIRE(run_cli("synth --out " + b.string() + " --n 1000 --seed 5") == 0);
        CHECK(test::read_file(a / "manifest.csv") == test::read_file(b / "manifest.csv"));
        CHECK(run_cli("synth --out " + a.string() + " --n 1000 --seed 6", &text) == kExitUsage);
        CHECK(text.find("--force") != std::string::npos);
        CHECK(run_cli("synth --out " + a.string() + " --n 1000 --seed 6 --force") == 0);
        CHECK(test::read_file(a / "manifest.csv") != test::read_file(b / "manifest.csv"));

        ManifestOptions o;
        o.task = {TaskKind::expression, 5};
        const auto samples = load_manifest(b / "manifest.csv", o);
        CHECK(samples.size() == 1000);
        SynthConfig sc;
        sc.samples = 1000;
        sc.seed = 5;
        CHECK(samples == synth_generate(sc));
        CHECK(run_cli("synth --out " + (dir.path() / "c").string() + " --imbalance 0.5,0.6") == kExitUsage);
    }

    TEST_CASE("output directory precedence") {
        TempDir dir("precedence");
        json j = tiny_config(dir.path() / "from_config", {"finetune"});
        j["seeds"] = {1};
        const auto cfg_path = write_config(dir.path(), j);
        std::ostringstream out, err;
        ::setenv("FAIRCL_OUT", (dir.path() / "from_env").c_str(), 1);
        RunFlags flags = flags_for(cfg_path);
        flags.out = dir.path() / "from_flag";
        CHECK(cmd_run(flags, out, err) == kExitOk);
        CHECK(fs::exists(dir.path() / "from_flag/fairness.csv"));
        CHECK_FALSE(fs::exists(dir.path() / "from_env"));
        flags.out.reset();
        CHECK(cmd_run(flags, out, err) == kExitOk);
        CHECK(fs::exists(dir.path() / "from_env/fairness.csv"));
        ::unsetenv("FAIRCL_OUT");
        CHECK(cmd_run(flags, out, err) == kExitOk);
        CHECK(fs::exists(dir.path() / "from_config/fairness.csv"));
        CHECK(out.str().find("1 trained") != std::string::npos);
    }

    TEST_CASE("run through the executable") {
        TempDir dir("clirun");
        json j = tiny_config(dir.path() / "out", {"finetune"});
        const auto cfg_path = write_config(dir.path(), j);
        std::string text;
        CHECK(run_cli("run --config " + cfg_path.string() + " --seeds 4,5 --epochs 1", &text) == 0);
        CHECK(text.find("2 trained") != std::string::npos);
        CHECK(read_csv(dir.path() / "out/fairness.csv").at(0).at("seeds") == "2");
        CHECK(run_cli("run --config " + cfg_path.string() + " --seeds 4,4", &text) == kExitUsage);
        CHECK(run_cli("report --runs " + (dir.path() / "out").string(), &text) == 0);
        CHECK(text.find("finetune") != std::string::npos);
    }
}
