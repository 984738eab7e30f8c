#include "faircl/experiment/commands.hpp"

#include <cstdlib>
#include <map>
#include <set>

#include "faircl/experiment/report.hpp"
#include "faircl/experiment/runner.hpp"

namespace faircl {

namespace fs = std::filesystem;

int cmd_run(const RunFlags& flags, std::ostream& out, std::ostream& err) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(flags.config);
        if (const char* env = std::getenv("FAIRCL_OUT"); env && *env) cfg.output = env;
        if (flags.out) cfg.output = *flags.out;
        if (flags.seeds) {
            if (flags.seeds->empty()) throw ConfigError("config: seeds: expected a non-empty list");
            if (std::set<std::uint64_t>(flags.seeds->begin(), flags.seeds->end()).size() != flags.seeds->size()) {
                throw ConfigError("config: seeds: duplicate seed");
            }
            cfg.seeds = *flags.seeds;
        }
        if (flags.epochs) {
            if (*flags.epochs == 0) throw ConfigError("config: training.epochs: must be >= 1");
            cfg.training.epochs = *flags.epochs;
        }
    } catch (const ValidationError& e) {
        err << e.what() << '\n';
        return kExitUsage;
    }
    GridResult grid;
    try {
        grid = run_grid(cfg, RunOptions{flags.jobs, flags.force, &out});
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailedCells;
    }
    out << grid.trained << " trained, " << grid.cached << " cached, " << grid.failed << " failed; results in "
        << cfg.output.string() << '\n';
    return grid.failed ? kExitFailedCells : kExitOk;
}

int cmd_synth(const SynthFlags& flags, std::ostream& out, std::ostream& err) {
    SynthConfig sc;
    sc.mode = flags.image ? SynthMode::image : SynthMode::vector;
    sc.task = TaskSpec{flags.au ? TaskKind::action_units : TaskKind::expression, flags.classes};
    sc.domains = flags.domains;
    sc.samples = flags.n;
    if (!flags.imbalance.empty()) {
        sc.ratios = flags.imbalance;
    } else if (flags.domains != 2) {
        sc.ratios.assign(flags.domains, 1.0 / static_cast<double>(flags.domains));
    }
    if (flags.shift) sc.shift = *flags.shift;
    if (flags.noise) sc.noise = *flags.noise;
    if (flags.dim) sc.dim = *flags.dim;
    sc.seed = flags.seed;
    try {
        sc.validate();
    } catch (const ValidationError& e) {
        err << e.what() << '\n';
        return kExitUsage;
    }
    if (fs::exists(flags.out) && !fs::is_empty(flags.out) && !flags.force) {
        err << "refusing to write into non-empty directory '" << flags.out.string() << "' (use --force)\n";
        return kExitUsage;
    }
    if (flags.force && fs::exists(flags.out)) {
        fs::remove(flags.out / "manifest.csv");
        fs::remove(flags.out / "synth.json");
        fs::remove_all(flags.out / "img");
    }
    const auto samples = synth_generate(sc);
    export_synthetic(flags.out, sc, samples);
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& s : samples) {
        auto& c = counts[s.domain];
        (s.split == Split::train ? c.first : c.second)++;
    }
    for (const auto& [d, c] : counts) {
        out << d << ": " << c.first + c.second << " (train " << c.first << ", test " << c.second << ")\n";
    }
    out << "wrote " << samples.size() << " rows to " << (flags.out / "manifest.csv").string() << '\n';
    return kExitOk;
}

int cmd_report(const ReportFlags& flags, std::ostream& out, std::ostream& err) {
    if (flags.format != "text" && flags.format != "csv") {
        err << "--format must be text or csv\n";
        return kExitUsage;
    }
    try {
        const auto fair = fairness_matrix(flags.runs);
        const auto acc = accuracy_matrix(flags.runs);
        if (flags.format == "text") {
            render_text(out, fair);
            out << '\n';
            render_text(out, acc);
        } else {
            render_csv(out, fair);
            render_csv(out, acc);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitOk;
}

}  // namespace faircl
