#include "faircl/experiment/runner.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>

namespace faircl {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view cell_status_name(CellStatus s) noexcept {
    switch (s) {
        case CellStatus::trained: return "trained";
        case CellStatus::cached: return "cached";
        case CellStatus::failed: return "failed";
    }
    return "failed";
}

namespace {

constexpr const char* kRecordSchema = "faircl-run-record/1";
constexpr const char* kManifestSchema = "faircl-run-manifest/1";

std::string attribute_label(const std::string& attribute, bool augment) {
    return augment ? attribute + "/aug" : attribute;
}

TaskKind task_of_tables(const std::vector<AccuracyTable>& tables) {
    return !tables.empty() && tables.front().task != "expression" ? TaskKind::action_units : TaskKind::expression;
}

void write_text(const fs::path& path, const std::string& text) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << text;
    }
    fs::rename(tmp, path);
}

}  // namespace

json record_to_json(const RunRecord& r) {
    json j;
    j["schema"] = kRecordSchema;
    j["method"] = std::string(method_name(r.method));
    j["attribute"] = r.attribute;
    j["augment"] = r.augment;
    j["seed"] = r.seed;
    j["hash"] = r.hash;
    j["status"] = std::string(cell_status_name(r.status == CellStatus::cached ? CellStatus::trained : r.status));
    j["error"] = r.error;
    j["seconds"] = r.seconds;
    j["chosen"] = r.chosen ? json(*r.chosen) : json(nullptr);
    j["sweep_scores"] = r.sweep_scores;
    json eps = json::array();
    for (const auto& e : r.history.episodes) {
        eps.push_back({{"episode", e.episode},
                       {"domain", e.domain},
                       {"epochs", e.epochs},
                       {"final_task_loss", e.final_task_loss},
                       {"final_penalty", e.final_penalty},
                       {"accuracy", e.accuracy}});
    }
    j["history"] = {{"seed", r.history.seed}, {"warnings", r.history.warnings}, {"episodes", eps}};
    json tables = json::array();
    for (const auto& t : r.tables) {
        json entry{{"task", t.task}, {"entries", t.entries}};
        if (!t.counts.empty()) {
            json counts = json::object();
            for (const auto& [domain, c] : t.counts) counts[domain] = {c.correct, c.total};
            entry["counts"] = counts;
        }
        tables.push_back(entry);
    }
    j["tables"] = tables;
    j["task"] = std::string(task_name(task_of_tables(r.tables)));
    j["fairness"] = r.tables.empty() ? json(nullptr) : json(r.report.fairness.mean);
    return j;
}

RunRecord record_from_json(const json& j) {
    if (j.value("schema", "") != kRecordSchema) throw ValidationError("record: unsupported schema");
    RunRecord r;
    try {
        r.method = parse_method(j.at("method").get<std::string>());
        r.attribute = j.at("attribute").get<std::string>();
        r.augment = j.at("augment").get<bool>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.hash = j.at("hash").get<std::string>();
        const auto status = j.at("status").get<std::string>();
        r.status = status == "failed" ? CellStatus::failed : CellStatus::trained;
        r.error = j.at("error").get<std::string>();
        r.seconds = j.at("seconds").get<double>();
        if (!j.at("chosen").is_null()) r.chosen = j.at("chosen").get<double>();
        r.sweep_scores = j.at("sweep_scores").get<std::vector<double>>();
        const auto& h = j.at("history");
        r.history.seed = h.at("seed").get<std::uint64_t>();
        r.history.warnings = h.at("warnings").get<std::vector<std::string>>();
        for (const auto& e : h.at("episodes")) {
            EpisodeRecord rec;
            rec.episode = e.at("episode").get<std::size_t>();
            rec.domain = e.at("domain").get<std::string>();
            rec.epochs = e.at("epochs").get<std::size_t>();
            rec.final_task_loss = e.at("final_task_loss").get<double>();
            rec.final_penalty = e.at("final_penalty").get<double>();
            rec.accuracy = e.at("accuracy").get<std::map<std::string, double>>();
            r.history.episodes.push_back(std::move(rec));
        }
        for (const auto& t : j.at("tables")) {
            auto task = t.at("task").get<std::string>();
            if (t.contains("counts")) {
                std::map<std::string, HitCount> counts;
                for (const auto& [domain, c] : t.at("counts").items()) {
                    counts[domain] = HitCount{c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()};
                }
                r.tables.push_back(AccuracyTable::from_counts(std::move(counts), std::move(task)));
            } else {
                r.tables.push_back(AccuracyTable::from(t.at("entries").get<std::map<std::string, double>>(),
                                                       std::move(task)));
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("record: ") + e.what());
    }
    if (r.status != CellStatus::failed) {
        r.report = make_report(attribute_label(r.attribute, r.augment), task_of_tables(r.tables), r.tables);
    }
    return r;
}

std::vector<Episode> load_episodes(const ExperimentConfig& cfg) {
    std::vector<Sample> samples;
    if (cfg.manifest) {
        samples = load_manifest(*cfg.manifest, cfg.manifest_options);
    } else {
        samples = synth_generate(cfg.synth);
    }
    for (const auto& s : samples) validate_sample(s, cfg.task);
    return split_episodes(samples, OrderPolicy{cfg.domain_order});
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, Method method, std::span<const Episode> episodes) {
    ModelSpec spec = cfg.model;
    spec.task = cfg.task;
    spec.head = HeadSpec{head_of(method), episodes.size()};
    const Sample* first = nullptr;
    for (const auto& ep : episodes) {
        if (!ep.train.empty()) {
            first = &ep.train.front();
            break;
        }
    }
    if (!first) throw ValidationError("dataset has no training samples");
    if (first->shape.size() == 1) {
        spec.input = InputKind::vector;
        spec.dim = first->shape[0];
        if (spec.backbone == BackboneKind::baseline_cnn) {
            throw ValidationError("model.backbone: baseline_cnn needs image samples; use mlp for feature vectors");
        }
    } else {
        spec.input = InputKind::image;
        spec.channels = first->shape[0];
        spec.height = first->shape[1];
        spec.width = first->shape[2];
    }
    spec.validate();
    return spec;
}

std::vector<Episode> validation_episodes(std::span<const Episode> episodes, double fraction, std::uint64_t seed) {
    std::vector<Episode> out;
    for (const auto& ep : episodes) {
        Episode v;
        v.domain = ep.domain;
        v.position = ep.position;
        if (!ep.train.empty()) {
            auto split = stratified_split(ep.train, fraction, mix_seed(seed, ep.position));
            v.train = std::move(split.train);
            v.test = std::move(split.test);
        }
        out.push_back(std::move(v));
    }
    return out;
}

namespace {

struct Trained {
    Model model;
    TrainingHistory history;
};

Trained train_method(const ExperimentConfig& cfg, const MethodSettings& ms, const TrainConfig& tc,
                     std::uint64_t seed, std::span<const Episode> episodes) {
    Trained t{build_model(model_spec_for(cfg, ms.method, episodes), seed, tc.precision), {}};
    switch (ms.method) {
        case Method::offline:
        case Method::ddc:
        case Method::dic: t.history = train_offline(t.model, episodes, tc, seed, false); break;
        case Method::strategic_sampling: t.history = train_offline(t.model, episodes, tc, seed, true); break;
        default: t.history = train_domain_incremental(t.model, episodes, ms.method, ms.hyper, tc, seed).history; break;
    }
    return t;
}

double mean_accuracy(const std::map<std::string, double>& acc) {
    if (acc.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [d, v] : acc) s += v;
    return s / static_cast<double>(acc.size());
}

}  // namespace

RunRecord run_cell(const ExperimentConfig& cfg, const MethodSettings& method, bool augment, std::uint64_t seed,
                   std::span<const Episode> episodes) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    r.method = method.method;
    r.attribute = cfg.attribute;
    r.augment = augment;
    r.seed = seed;
    r.hash = config_hash(cell_identity(cfg, method, augment, seed));
    TrainConfig tc = cfg.training;
    tc.augment.enabled = augment;
    MethodSettings ms = method;
    if (!ms.sweep.empty()) {
        const auto val = validation_episodes(episodes, cfg.validation_fraction, mix_seed(seed, 0x5eed));
        double best = -1.0;
        for (double v : ms.sweep) {
            MethodSettings trial = ms;
            swept_value(trial) = v;
            auto t = train_method(cfg, trial, tc, seed, val);
            const double score = mean_accuracy(t.history.episodes.back().accuracy);
            r.sweep_scores.push_back(score);
            if (score > best) {
                best = score;
                r.chosen = v;
            }
        }
        swept_value(ms) = *r.chosen;
    }
    auto t = train_method(cfg, ms, tc, seed, episodes);
    r.history = std::move(t.history);
    const auto records = evaluate(t.model, episodes, tc, parse_attribute_kind(cfg.attribute));
    std::vector<std::string> expected;
    for (const auto& ep : episodes) {
        if (!ep.test.empty()) expected.push_back(ep.domain);
    }
    r.tables = per_domain_accuracy(records, expected);
    r.report = make_report(attribute_label(cfg.attribute, augment), cfg.task.kind, r.tables);
    r.status = CellStatus::trained;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<MethodReport> aggregate_cells(const ExperimentConfig& cfg, const std::vector<RunRecord>& cells) {
    std::vector<MethodReport> out;
    for (const auto& ms : cfg.methods) {
        for (bool aug : cfg.augmentation_flags()) {
            std::vector<FairnessReport> reports;
            for (const auto& c : cells) {
                if (c.method == ms.method && c.augment == aug && c.status != CellStatus::failed) {
                    reports.push_back(c.report);
                }
            }
            if (reports.empty()) continue;
            out.push_back(MethodReport{std::string(method_name(ms.method)), aggregate_seeds(reports)});
        }
    }
    // fixed row order regardless of config order
    std::stable_sort(out.begin(), out.end(), [](const MethodReport& a, const MethodReport& b) {
        const auto ma = parse_method(a.method), mb = parse_method(b.method);
        return ma != mb ? ma < mb : a.report.attribute < b.report.attribute;
    });
    return out;
}

GridResult run_grid(const ExperimentConfig& cfg, const RunOptions& options) {
    const auto episodes = load_episodes(cfg);
    const fs::path runs_dir = cfg.output / "runs";
    fs::create_directories(runs_dir);

    struct Cell {
        const MethodSettings* method;
        bool augment;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& ms : cfg.methods) {
        for (bool aug : cfg.augmentation_flags()) {
            for (auto seed : cfg.seeds) cells.push_back(Cell{&ms, aug, seed});
        }
    }

    GridResult result;
    result.cells.resize(cells.size());
    std::mutex io;
    std::atomic<std::size_t> next{0};
    std::size_t done = 0;

    auto work = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const auto& c = cells[i];
            const auto hash = config_hash(cell_identity(cfg, *c.method, c.augment, c.seed));
            const fs::path record_path = runs_dir / hash / "record.json";
            RunRecord rec;
            bool have = false;
            if (!options.force && fs::exists(record_path)) {
                try {
                    std::ifstream in(record_path);
                    rec = record_from_json(json::parse(in));
                    have = rec.status != CellStatus::failed;
                    if (have) rec.status = CellStatus::cached;
                } catch (const std::exception&) {
                    have = false;
                }
            }
            if (!have) {
                try {
                    rec = run_cell(cfg, *c.method, c.augment, c.seed, episodes);
                } catch (const std::exception& e) {
                    rec = RunRecord{};
                    rec.method = c.method->method;
                    rec.attribute = cfg.attribute;
                    rec.augment = c.augment;
                    rec.seed = c.seed;
                    rec.hash = hash;
                    rec.status = CellStatus::failed;
                    rec.error = e.what();
                }
            }
            std::lock_guard lock(io);
            if (rec.status != CellStatus::cached) {
                fs::create_directories(record_path.parent_path());
                write_text(record_path, record_to_json(rec).dump(2) + "\n");
            }
            ++done;
            if (options.log) {
                auto& log = *options.log;
                log << '[' << done << '/' << cells.size() << "] " << method_name(rec.method)
                    << " aug=" << (rec.augment ? "on" : "off") << " seed=" << rec.seed << ' '
                    << cell_status_name(rec.status);
                if (rec.status == CellStatus::failed) {
                    log << ": " << rec.error;
                } else {
                    log << " F=" << format_fixed4(rec.report.fairness.mean);
                    if (rec.chosen) log << ' ' << swept_name(rec.method) << '=' << *rec.chosen;
                }
                log << '\n' << std::flush;
            }
            result.cells[i] = std::move(rec);
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    json manifest;
    manifest["schema"] = kManifestSchema;
    json list = json::array();
    for (const auto& rec : result.cells) {
        switch (rec.status) {
            case CellStatus::trained: ++result.trained; break;
            case CellStatus::cached: ++result.cached; break;
            case CellStatus::failed: ++result.failed; break;
        }
        json entry = {{"method", std::string(method_name(rec.method))},
                      {"augment", rec.augment},
                      {"seed", rec.seed},
                      {"hash", rec.hash},
                      {"status", rec.status == CellStatus::failed ? "failed" : "ok"}};
        if (rec.status == CellStatus::failed) entry["error"] = rec.error;
        if (rec.chosen) entry[swept_name(rec.method)] = *rec.chosen;
        list.push_back(std::move(entry));
    }
    manifest["cells"] = std::move(list);
    manifest["completed"] = result.cells.size() - result.failed;
    manifest["failed"] = result.failed;
    write_text(cfg.output / "manifest.json", manifest.dump(2) + "\n");

    result.reports = aggregate_cells(cfg, result.cells);
    std::ostringstream fair, acc;
    write_fairness_csv(fair, result.reports);
    write_accuracy_csv(acc, result.reports);
    write_text(cfg.output / "fairness.csv", fair.str());
    write_text(cfg.output / "accuracy.csv", acc.str());
    return result;
}

}  // namespace faircl
