#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "faircl/experiment/config.hpp"
#include "faircl/fairness/fairness.hpp"

namespace faircl {

enum class CellStatus { trained, cached, failed };

[[nodiscard]] std::string_view cell_status_name(CellStatus s) noexcept;

/// One (method, augmentation, seed) run.
struct RunRecord {
    Method method = Method::finetune;
    std::string attribute;
    bool augment = false;
    std::uint64_t seed = 0;
    std::string hash;
    CellStatus status = CellStatus::trained;
    std::string error;
    double seconds = 0.0;
    /// Strength picked by the sweep, when the method had one.
    std::optional<double> chosen;
    std::vector<double> sweep_scores;  // mean validation accuracy per candidate
    TrainingHistory history;
    std::vector<AccuracyTable> tables;
    FairnessReport report;
};

/// record.json layout, versioned by its "schema" field.
[[nodiscard]] nlohmann::json record_to_json(const RunRecord& r);
[[nodiscard]] RunRecord record_from_json(const nlohmann::json& j);

/// Loads the configured dataset and splits it into episodes.
[[nodiscard]] std::vector<Episode> load_episodes(const ExperimentConfig& cfg);

/// Model layout for `method` on these episodes.
[[nodiscard]] ModelSpec model_spec_for(const ExperimentConfig& cfg, Method method, std::span<const Episode> episodes);

/// Trains one cell (including any sweep) and evaluates it. Does not touch
/// the filesystem.
[[nodiscard]] RunRecord run_cell(const ExperimentConfig& cfg, const MethodSettings& method, bool augment,
                                 std::uint64_t seed, std::span<const Episode> episodes);

/// Holds out validation_fraction of every episode's train split (stratified)
/// and uses it as the episode's test split.
[[nodiscard]] std::vector<Episode> validation_episodes(std::span<const Episode> episodes, double fraction,
                                                       std::uint64_t seed);

struct RunOptions {
    std::size_t jobs = 1;
    bool force = false;
    std::ostream* log = nullptr;
};

struct GridResult {
    std::vector<RunRecord> cells;  // grid order: method, augmentation, seed
    std::size_t trained = 0;
    std::size_t cached = 0;
    std::size_t failed = 0;
    std::vector<MethodReport> reports;  // per (method, augmentation)
};

/// Runs every cell, reusing cached records by config hash unless forced,
/// and writes runs/<hash>/record.json, manifest.json, fairness.csv and
/// accuracy.csv under cfg.output.
[[nodiscard]] GridResult run_grid(const ExperimentConfig& cfg, const RunOptions& options);

/// Seed-aggregated reports in grid order; failed cells are left out.
[[nodiscard]] std::vector<MethodReport> aggregate_cells(const ExperimentConfig& cfg,
                                                        const std::vector<RunRecord>& cells);

}  // namespace faircl
