#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faircl/data/sample.hpp"
#include "faircl/rng.hpp"

namespace faircl {

// ---------------------------------------------------------------------------
// Manifests
//
// CSV with header `path,label,domain,split` (or `features,...` for
// precomputed vectors, ';'-separated). Expression labels are integers in
// [0, M); AU labels are A characters of 0/1, leftmost = AU 1. An empty split
// sends the row through stratified_split. Paths are relative to the manifest.
// ---------------------------------------------------------------------------

struct ManifestOptions {
    TaskSpec task{};
    // Decoded images are resized to channels x height x width in [0, 1].
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 64;
    double test_fraction = 0.2;
    std::uint64_t split_seed = 0;
};

/// Raises ValidationError naming the file line for any malformed row.
[[nodiscard]] std::vector<Sample> load_manifest(const std::filesystem::path& path, const ManifestOptions& options,
                                                std::vector<std::string>* warnings = nullptr);

/// Writes samples as a manifest in `dir`. Image samples are stored as 8-bit
/// PNGs under dir/img; vector samples use the features column with
/// shortest round-trip decimals.
void write_manifest(const std::filesystem::path& dir, const std::vector<Sample>& samples, const TaskSpec& task,
                    const std::string& manifest_name = "manifest.csv");

[[nodiscard]] std::string encode_label(const Label& label);

// ---------------------------------------------------------------------------
// Splits and episodes
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::vector<std::string> warnings;
};

/// Holds out round(test_fraction * n) of every (domain, label) stratum,
/// deterministically in `seed`. Strata with fewer than 2 samples stay in
/// train and produce a warning.
[[nodiscard]] SplitResult stratified_split(const std::vector<Sample>& samples, double test_fraction,
                                           std::uint64_t seed);

struct OrderPolicy {
    /// Empty: descending train count, ties by domain name.
    std::vector<std::string> explicit_order;
};

/// One episode per domain; samples must carry train/test splits. Fewer than
/// two domains is a ValidationError.
[[nodiscard]] std::vector<Episode> split_episodes(const std::vector<Sample>& samples, const OrderPolicy& policy = {});

// ---------------------------------------------------------------------------
// Synthetic domain-shift data
// ---------------------------------------------------------------------------

enum class SynthMode { vector, image };

struct SynthConfig {
    SynthMode mode = SynthMode::vector;
    TaskSpec task{TaskKind::expression, 5};
    std::size_t domains = 2;
    std::size_t dim = 16;
    std::size_t image_size = 32;
    std::size_t samples = 5000;  // total over domains and splits
    std::vector<double> ratios{0.8, 0.2};
    double shift = 1.0;          // rotation angle in radians; also scales offsets
    double offset_scale = 3.0;   // |b_d| per unit of shift
    double noise = 1.5;          // sigma of the additive noise
    double separation = 2.0;     // prototype scale
    double test_fraction = 0.2;
    std::uint64_t seed = 7;

    void validate() const;
    [[nodiscard]] std::vector<std::size_t> domain_counts() const;
    [[nodiscard]] std::string domain_name(std::size_t d) const;
};

/// Vector mode: x = R_d mu_c + b_d + noise. Image mode: a class pattern on a
/// 1 x S x S canvas with domain-dependent intensity and position. Pixel
/// values are multiples of 1/255 so PNG export is lossless.
[[nodiscard]] std::vector<Sample> synth_generate(const SynthConfig& cfg);

/// Writes the dataset in manifest form plus `synth.json` with the config.
void export_synthetic(const std::filesystem::path& dir, const SynthConfig& cfg, const std::vector<Sample>& samples);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool enabled = false;
    double flip_prob = 0.5;
    double max_rotation_deg = 10.0;
    double pixel_noise = 0.01;
    double vector_jitter = 0.05;
};

/// Image samples: random horizontal flip, rotation, pixel noise. Vector
/// samples: additive Gaussian jitter. Disabled -> returns the input
/// unchanged and draws nothing from `rng`.
[[nodiscard]] Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);
void flip_horizontal(Sample& s);
void rotate_image(Sample& s, double degrees);

}  // namespace faircl
