#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faircl/continual/training.hpp"
#include "faircl/data/dataset.hpp"
#include "faircl/models/model.hpp"

namespace faircl {

/// Invalid configuration; the message names the offending field.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

enum class AugMode { off, on, both };

struct MethodSettings {
    Method method = Method::finetune;
    MethodConfig hyper{};
    /// Candidate values for the method's strength (lambda, or c for si).
    /// Empty: no sweep.
    std::vector<double> sweep;
};

struct ExperimentConfig {
    // Exactly one source: a manifest file or a synthetic generator.
    std::optional<std::filesystem::path> manifest;
    ManifestOptions manifest_options{};
    SynthConfig synth{};

    TaskSpec task{};
    std::string attribute = "custom";
    std::vector<MethodSettings> methods;
    AugMode augmentation = AugMode::off;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    ModelSpec model{};
    TrainConfig training{};
    std::vector<std::string> domain_order;
    double validation_fraction = 0.2;
    std::filesystem::path output = "results";

    /// Augmentation flags the grid visits, off first.
    [[nodiscard]] std::vector<bool> augmentation_flags() const;
};

/// Parses and validates. Relative manifest paths resolve against `base`.
/// Raises ConfigError.
[[nodiscard]] ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {});
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of everything that influences one cell's result.
[[nodiscard]] nlohmann::json cell_identity(const ExperimentConfig& cfg, const MethodSettings& method, bool augment,
                                           std::uint64_t seed);

/// 16 hex digits of FNV-1a over the canonical dump.
[[nodiscard]] std::string config_hash(const nlohmann::json& identity);

/// Strength value that a sweep varies for `m` (lambda, or c for si).
[[nodiscard]] double& swept_value(MethodSettings& m);
[[nodiscard]] const char* swept_name(Method m) noexcept;

}  // namespace faircl
