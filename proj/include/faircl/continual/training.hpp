#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "faircl/autodiff/optimizer.hpp"
#include "faircl/continual/regularizer.hpp"
#include "faircl/continual/replay.hpp"
#include "faircl/data/dataset.hpp"
#include "faircl/fairness/fairness.hpp"
#include "faircl/models/model.hpp"

namespace faircl {

enum class Method { finetune, offline, ddc, dic, strategic_sampling, ewc, ewc_online, si, mas, naive_rehearsal };

[[nodiscard]] std::string_view method_name(Method m) noexcept;
/// Raises ValidationError for unknown names.
[[nodiscard]] Method parse_method(std::string_view text);
[[nodiscard]] const std::vector<Method>& all_methods();

/// True for methods trained one domain at a time.
[[nodiscard]] bool is_incremental(Method m) noexcept;
/// Regularizer used by an incremental method (none for finetune).
[[nodiscard]] RegMethod regularizer_of(Method m) noexcept;
/// Head layout a method trains: ddc, dic or standard.
[[nodiscard]] HeadKind head_of(Method m) noexcept;

struct TrainConfig {
    OptimizerConfig optimizer{};
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    Precision precision = Precision::wide;
    AugmentConfig augment{};
    DdcReduction ddc_rule = DdcReduction::sum;
    std::size_t eval_batch = 256;
    /// When set, parameter checksums are written after every optimizer step.
    std::ostream* checksum_log = nullptr;

    void validate() const;
};

struct EpisodeRecord {
    std::size_t episode = 0;
    std::string domain;
    std::size_t epochs = 0;
    double final_task_loss = 0.0;  // mean over the last epoch's batches
    double final_penalty = 0.0;
    /// Test accuracy per domain after this episode (mean over units for AU).
    std::map<std::string, double> accuracy;
};

struct TrainingHistory {
    std::uint64_t seed = 0;
    std::vector<EpisodeRecord> episodes;
    std::vector<std::string> warnings;
};

struct IncrementalResult {
    RegularizerState state;
    ReplayBuffer buffer;
    TrainingHistory history;
};

/// Training data for one step, stacked.
struct Batch {
    Tensor inputs;                 // [B, ...sample shape]
    std::vector<std::size_t> classes;  // expression targets
    Tensor units;                  // [B, A] AU targets (empty for expression)
    std::vector<std::size_t> domains;  // index into the stream's domain list
    std::vector<double> weights;   // empty = unweighted
};

/// Stacks samples; `domain_index` maps domain names to head/block indices.
[[nodiscard]] Batch make_batch(std::span<const Sample> samples, const TaskSpec& task,
                               const std::map<std::string, std::size_t>& domain_index);

/// Task loss for any head kind. ddc targets the joint (domain, class)
/// output; dic routes each row to its domain's head and weights the
/// per-head means by their share of the batch.
Var task_loss(Graph& g, Model& model, const Batch& batch, Model::Mode mode);

/// Eval-mode predictions. dic uses the head of each sample's own domain.
[[nodiscard]] std::vector<Label> predict(Model& model, std::span<const Sample> samples,
                                         const std::map<std::string, std::size_t>& domain_index,
                                         const TrainConfig& cfg);

/// Evaluation records over every episode's test split.
[[nodiscard]] std::vector<EvaluationRecord> evaluate(Model& model, std::span<const Episode> episodes,
                                                     const TrainConfig& cfg, AttributeKind attribute);

/// Per-domain test accuracy (mean over units for AU).
[[nodiscard]] std::map<std::string, double> domain_accuracy(Model& model, std::span<const Episode> episodes,
                                                            const TrainConfig& cfg);

/// w_d = N_total / (K * n_d). Zero counts raise ValidationError.
[[nodiscard]] std::map<std::string, double> strategic_weights(const std::map<std::string, std::size_t>& counts);

/// Trains episodes in order under `method` (finetune or a CL method).
[[nodiscard]] IncrementalResult train_domain_incremental(Model& model, std::span<const Episode> episodes,
                                                         Method method, const MethodConfig& hyper,
                                                         const TrainConfig& cfg, std::uint64_t seed);

/// Joint training on the pooled train splits. With `weighted`, samples are
/// weighted by strategic_weights of their domain.
[[nodiscard]] TrainingHistory train_offline(Model& model, std::span<const Episode> episodes, const TrainConfig& cfg,
                                            std::uint64_t seed, bool weighted = false);

/// Domain names in stream order, and their indices.
[[nodiscard]] std::map<std::string, std::size_t> domain_indices(std::span<const Episode> episodes);

}  // namespace faircl
