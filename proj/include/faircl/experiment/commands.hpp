#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace faircl {

// Exit codes shared by the subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailedCells = 1;
inline constexpr int kExitUsage = 2;

struct RunFlags {
    std::filesystem::path config;
    std::size_t jobs = 1;
    bool force = false;
    std::optional<std::filesystem::path> out;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::size_t> epochs;
};

/// Output directory precedence: --out, then FAIRCL_OUT, then the file.
int cmd_run(const RunFlags& flags, std::ostream& out, std::ostream& err);

struct SynthFlags {
    std::filesystem::path out;
    std::size_t domains = 2;
    std::size_t classes = 5;
    std::size_t n = 5000;
    std::vector<double> imbalance;  // empty: 0.8/0.2 for two domains, uniform otherwise
    std::optional<double> shift;
    std::optional<double> noise;
    std::optional<std::size_t> dim;
    std::uint64_t seed = 7;
    bool image = false;
    bool au = false;
    bool force = false;
};

int cmd_synth(const SynthFlags& flags, std::ostream& out, std::ostream& err);

struct ReportFlags {
    std::vector<std::filesystem::path> runs;
    std::string format = "text";
};

int cmd_report(const ReportFlags& flags, std::ostream& out, std::ostream& err);

}  // namespace faircl
