#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "faircl/autodiff/graph.hpp"
#include "faircl/autodiff/tensor.hpp"
#include "faircl/continual/training.hpp"
#include "faircl/data/dataset.hpp"
#include "faircl/rng.hpp"

namespace faircl::test {

[[nodiscard]] Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0);

/// Builds an output from graph leaves bound to the entries of a ParameterSet.
using Builder = std::function<Var(Graph&, std::vector<Var>&)>;

/// Reduces the builder output with fixed random weights and compares
/// backward() with central differences. Returns the largest relative error.
[[nodiscard]] double gradient_error(ParameterSet& params, const Builder& build, std::uint64_t weight_seed);

/// Names of every checked operation: the primitives plus both losses.
[[nodiscard]] std::vector<std::string> gradient_ops();

/// Relative errors of `trials` checks of one operation on random shapes.
[[nodiscard]] std::vector<double> gradient_trials(const std::string& op, std::size_t trials, std::uint64_t seed);

/// Removes itself on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

[[nodiscard]] std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

[[nodiscard]] Sample vector_sample(std::vector<double> features, std::size_t cls, std::string domain,
                                   Split split = Split::train);

/// Episodes of a small synthetic vector benchmark.
[[nodiscard]] std::vector<Episode> small_stream(std::size_t samples, std::uint64_t seed, double shift = 1.0,
                                                std::vector<double> ratios = {0.8, 0.2});

/// MLP spec matching the first train sample of `episodes`.
[[nodiscard]] ModelSpec mlp_spec_for(std::span<const Episode> episodes, std::vector<std::size_t> hidden,
                                     HeadSpec head = {});

/// Differences between a baseline CNN and the expected layer plan: four
/// blocks of [conv, relu, conv, relu, pool, bn, dropout], flatten, two hidden
/// dense layers each followed by relu and dropout, then the head(s). Also
/// checks head widths (N*M for ddc), that heads share no tensors, and that
/// every non-head tensor belongs to the shared trunk. Empty when conformant.
[[nodiscard]] std::vector<std::string> architecture_violations(const Model& model);

/// Directory of the source tree, for configs shipped with the repository.
[[nodiscard]] std::filesystem::path source_dir();

}  // namespace faircl::test
