#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "faircl/autodiff/graph.hpp"
#include "faircl/autodiff/ops.hpp"
#include "faircl/autodiff/tensor.hpp"
#include "faircl/rng.hpp"
#include "faircl/task.hpp"

namespace faircl {

enum class InputKind { image, vector };
enum class BackboneKind { baseline_cnn, mlp };
enum class HeadKind { standard, ddc, dic };
/// Class-score rule applied to DDC joint probabilities at inference.
enum class DdcReduction { sum, max };

struct HeadSpec {
    HeadKind kind = HeadKind::standard;
    std::size_t num_domains = 1;  // N, used by ddc and dic

    /// Width of one head: M (or A) for standard and dic, N*M for ddc.
    [[nodiscard]] std::size_t output_width(std::size_t task_outputs) const noexcept {
        return kind == HeadKind::ddc ? num_domains * task_outputs : task_outputs;
    }
    [[nodiscard]] std::size_t head_count() const noexcept {
        return kind == HeadKind::dic ? num_domains : 1;
    }
};

struct ModelSpec {
    InputKind input = InputKind::vector;
    std::size_t channels = 1;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t dim = 16;

    BackboneKind backbone = BackboneKind::mlp;
    std::vector<std::size_t> channel_plan{32, 64, 128, 256};
    /// Hidden dense widths between the backbone and the head.
    std::vector<std::size_t> hidden{512, 256};

    HeadSpec head{};
    TaskSpec task{};

    double conv_dropout = 0.25;
    double dense_dropout = 0.5;
    double bn_momentum = 0.1;

    /// Raises ValidationError on inconsistent fields.
    void validate() const;
};

enum class LayerKind { conv2d, relu, maxpool2d, batchnorm, dropout, flatten, dense };

[[nodiscard]] std::string_view layer_kind_name(LayerKind kind) noexcept;

struct Layer {
    LayerKind kind = LayerKind::dense;
    std::string name;
    std::string weight;  // conv/dense kernel or batchnorm gamma
    std::string bias;    // conv/dense bias or batchnorm beta
    double rate = 0.0;   // dropout
    Shape output_shape;  // per sample, batch axis omitted
    std::size_t param_count = 0;
};

/// Parameters, running statistics, and the layer plan of a network. A model
/// has one writer at a time; eval-mode forwards only read it.
class Model {
public:
    struct Mode {
        bool training = false;
        Rng* rng = nullptr;  // dropout source; required when training
    };

    Model(ModelSpec spec, ParameterSet params, std::vector<Layer> backbone, std::vector<Layer> heads,
          std::map<std::string, ops::BatchNormStats> bn_stats);

    [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] ParameterSet& params() noexcept { return params_; }
    [[nodiscard]] const ParameterSet& params() const noexcept { return params_; }
    [[nodiscard]] const std::vector<Layer>& backbone_layers() const noexcept { return backbone_; }
    [[nodiscard]] const std::vector<Layer>& heads() const noexcept { return heads_; }
    [[nodiscard]] std::size_t head_count() const noexcept { return heads_.size(); }
    [[nodiscard]] std::size_t head_width() const noexcept { return heads_.front().output_shape.front(); }
    [[nodiscard]] Shape input_shape() const;
    [[nodiscard]] std::map<std::string, ops::BatchNormStats>& batchnorm_stats() noexcept { return bn_; }

    /// Shared trunk: every layer before the head(s). x is [B, ...input_shape].
    Var features(Graph& g, Var x, Mode mode);
    /// Applies head `index` (0 for standard/ddc) to backbone features.
    Var head(Graph& g, Var features, std::size_t index);
    /// features + head 0. Not valid for dic heads, which need a domain.
    Var forward(Graph& g, Var x, Mode mode);

    /// Every layer in evaluation order, heads last.
    [[nodiscard]] std::vector<Layer> summary() const;
    /// One line per layer: name, kind, output shape, parameter count.
    [[nodiscard]] std::string summary_text() const;

    /// Parameter names belonging to head `index`.
    [[nodiscard]] std::vector<std::string> head_parameter_names(std::size_t index) const;

private:
    Var apply(Graph& g, const Layer& layer, Var x, Mode mode);

    ModelSpec spec_;
    ParameterSet params_;
    std::vector<Layer> backbone_;
    std::vector<Layer> heads_;
    std::map<std::string, ops::BatchNormStats> bn_;
};

/// 4 x [conv, relu, conv, relu, maxpool, batchnorm, dropout] -> flatten ->
/// hidden dense layers (relu, dropout) -> head. Raises ShapeError when the
/// input cannot survive four 2x poolings.
[[nodiscard]] Model build_baseline_cnn(const ModelSpec& spec, std::uint64_t seed,
                                       Precision precision = Precision::wide);

/// Dense layers with relu over a vector input, then the head. With no
/// hidden layers it is a linear model.
[[nodiscard]] Model build_mlp(const ModelSpec& spec, std::uint64_t seed, Precision precision = Precision::wide);

/// Dispatches on spec.backbone.
[[nodiscard]] Model build_model(const ModelSpec& spec, std::uint64_t seed, Precision precision = Precision::wide);

// Prediction rules.

/// Row-wise argmax; ties go to the lowest index.
[[nodiscard]] std::vector<std::size_t> predict_expression(const Tensor& scores);
/// 1 iff sigmoid(logit) >= threshold.
[[nodiscard]] std::vector<std::vector<std::uint8_t>> predict_au(const Tensor& logits, double threshold = 0.5);
/// Same rule applied to probabilities directly (used after DDC reduction).
[[nodiscard]] std::vector<std::vector<std::uint8_t>> predict_au_from_probs(const Tensor& probs,
                                                                           double threshold = 0.5);

/// Joint (domain, class) target: d*M + c.
[[nodiscard]] std::size_t ddc_joint_index(std::size_t domain, std::size_t cls, std::size_t classes,
                                          std::size_t domains);
[[nodiscard]] std::pair<std::size_t, std::size_t> ddc_decode(std::size_t joint, std::size_t classes);
/// Collapses [B, N*M] joint probabilities to [B, M] by summing (or taking
/// the max) over domains.
[[nodiscard]] Tensor ddc_reduce(const Tensor& joint_probs, std::size_t classes,
                                DdcReduction rule = DdcReduction::sum);

using HeadFn = std::function<Var(Graph&, Var)>;
/// The head of a dic model trained for `domain`.
[[nodiscard]] HeadFn dic_select_head(Model& model, std::size_t domain);

}  // namespace faircl
