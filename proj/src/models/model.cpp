#include "faircl/models/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "faircl/error.hpp"

namespace faircl {

std::string_view layer_kind_name(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
    }
    return "unknown";
}

void ModelSpec::validate() const {
    if (task.kind == TaskKind::expression && task.outputs < 2) {
        throw ValidationError("model: expression task needs at least 2 classes");
    }
    if (task.kind == TaskKind::action_units && task.outputs < 1) {
        throw ValidationError("model: action-unit task needs at least 1 unit");
    }
    if (head.kind != HeadKind::standard && head.num_domains < 1) {
        throw ValidationError("model: ddc/dic heads need at least one domain");
    }
    if (input == InputKind::image && (channels == 0 || height == 0 || width == 0)) {
        throw ValidationError("model: image dimensions must be positive");
    }
    if (input == InputKind::vector && dim == 0) throw ValidationError("model: vector dimension must be positive");
    for (auto w : hidden) {
        if (w == 0) throw ValidationError("model: hidden layer of width 0");
    }
    for (double r : {conv_dropout, dense_dropout}) {
        if (r < 0.0 || r >= 1.0) throw ValidationError("model: dropout rate must lie in [0, 1)");
    }
}

Model::Model(ModelSpec spec, ParameterSet params, std::vector<Layer> backbone, std::vector<Layer> heads,
             std::map<std::string, ops::BatchNormStats> bn_stats)
    : spec_(std::move(spec)),
      params_(std::move(params)),
      backbone_(std::move(backbone)),
      heads_(std::move(heads)),
      bn_(std::move(bn_stats)) {}

Shape Model::input_shape() const {
    if (spec_.input == InputKind::image) return {spec_.channels, spec_.height, spec_.width};
    return {spec_.dim};
}

Var Model::apply(Graph& g, const Layer& layer, Var x, Mode mode) {
    switch (layer.kind) {
        case LayerKind::conv2d: {
            Var y = ops::conv2d(g, x, g.parameter(params_.at(layer.weight)), {1, 1});
            return ops::add_bias(g, y, g.parameter(params_.at(layer.bias)));
        }
        case LayerKind::dense: {
            Var y = ops::matmul(g, x, g.parameter(params_.at(layer.weight)));
            return ops::add_bias(g, y, g.parameter(params_.at(layer.bias)));
        }
        case LayerKind::relu: return ops::relu(g, x);
        case LayerKind::maxpool2d: return ops::maxpool2d(g, x, {2, 2});
        case LayerKind::batchnorm: {
            ops::BatchNormAttrs attrs;
            attrs.training = mode.training;
            attrs.momentum = spec_.bn_momentum;
            attrs.stats = &bn_.at(layer.name);
            return ops::batchnorm(g, x, g.parameter(params_.at(layer.weight)),
                                  g.parameter(params_.at(layer.bias)), attrs);
        }
        case LayerKind::dropout: return ops::dropout(g, x, {layer.rate, mode.training, mode.rng});
        case LayerKind::flatten: return ops::flatten(g, x);
    }
    throw ContractError("model: unknown layer kind");
}

Var Model::features(Graph& g, Var x, Mode mode) {
    Shape expect = input_shape();
    const auto& got = g.shape(x);
    if (got.size() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), got.begin() + 1)) {
        throw ShapeError("model: input " + shape_str(got) + " does not match per-sample shape " +
                         shape_str(expect));
    }
    for (const auto& layer : backbone_) x = apply(g, layer, x, mode);
    return x;
}

Var Model::head(Graph& g, Var features, std::size_t index) {
    if (index >= heads_.size()) {
        throw IndexError("model: head " + std::to_string(index) + " requested, model has " +
                         std::to_string(heads_.size()));
    }
    return apply(g, heads_[index], features, Mode{});
}

Var Model::forward(Graph& g, Var x, Mode mode) {
    if (spec_.head.kind == HeadKind::dic) {
        throw ContractError("model: dic models need a domain to pick a head; use dic_select_head");
    }
    return head(g, features(g, x, mode), 0);
}

std::vector<Layer> Model::summary() const {
    std::vector<Layer> all = backbone_;
    all.insert(all.end(), heads_.begin(), heads_.end());
    return all;
}

std::string Model::summary_text() const {
    std::ostringstream os;
    os << std::left << std::setw(24) << "layer" << std::setw(12) << "kind" << std::setw(18) << "output"
       << "params\n";
    std::size_t total = 0;
    for (const auto& l : summary()) {
        os << std::setw(24) << l.name << std::setw(12) << layer_kind_name(l.kind) << std::setw(18)
           << shape_str(l.output_shape) << l.param_count << '\n';
        total += l.param_count;
    }
    os << "total parameters: " << total << '\n';
    return os.str();
}

std::vector<std::string> Model::head_parameter_names(std::size_t index) const {
    const auto& h = heads_.at(index);
    return {h.weight, h.bias};
}

namespace {

class Builder {
public:
    Builder(const ModelSpec& spec, std::uint64_t seed, Precision precision)
        : spec_(spec), rng_(seed), precision_(precision) {}

    Shape current;

    void dense(const std::string& name, std::size_t out, std::vector<Layer>& into) {
        const std::size_t in = current.at(0);
        Layer l;
        l.kind = LayerKind::dense;
        l.name = name;
        l.weight = name + ".weight";
        l.bias = name + ".bias";
        init_uniform(l.weight, Shape{in, out}, in);
        init_uniform(l.bias, Shape{out}, in);
        current = {out};
        l.output_shape = current;
        l.param_count = in * out + out;
        into.push_back(std::move(l));
    }

    void conv(const std::string& name, std::size_t out) {
        const std::size_t in = current.at(0);
        const std::size_t fan_in = in * 9;
        Layer l;
        l.kind = LayerKind::conv2d;
        l.name = name;
        l.weight = name + ".weight";
        l.bias = name + ".bias";
        init_uniform(l.weight, Shape{out, in, 3, 3}, fan_in);
        init_uniform(l.bias, Shape{out}, fan_in);
        current[0] = out;
        l.output_shape = current;
        l.param_count = out * fan_in + out;
        backbone.push_back(std::move(l));
    }

    void batchnorm(const std::string& name) {
        const std::size_t c = current.at(0);
        Layer l;
        l.kind = LayerKind::batchnorm;
        l.name = name;
        l.weight = name + ".gamma";
        l.bias = name + ".beta";
        params.add(l.weight, Tensor(Shape{c}, 1.0));
        params.add(l.bias, Tensor(Shape{c}, 0.0));
        bn.emplace(name, ops::BatchNormStats::fresh(c));
        l.output_shape = current;
        l.param_count = 2 * c;
        backbone.push_back(std::move(l));
    }

    void simple(LayerKind kind, const std::string& name, double rate = 0.0) {
        Layer l;
        l.kind = kind;
        l.name = name;
        l.rate = rate;
        if (kind == LayerKind::maxpool2d) {
            current[1] /= 2;
            current[2] /= 2;
        } else if (kind == LayerKind::flatten) {
            current = {shape_size(current)};
        }
        l.output_shape = current;
        backbone.push_back(std::move(l));
    }

    void heads() {
        const std::size_t width = spec_.head.output_width(spec_.task.outputs);
        const std::size_t count = spec_.head.head_count();
        const Shape feat = current;
        for (std::size_t h = 0; h < count; ++h) {
            current = feat;
            dense(count == 1 ? std::string("head") : "head" + std::to_string(h), width, head_layers);
        }
    }

    Model finish() {
        return Model(spec_, std::move(params), std::move(backbone), std::move(head_layers), std::move(bn));
    }

    std::vector<Layer> backbone;
    std::vector<Layer> head_layers;

private:
    void init_uniform(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor t(std::move(shape));
        for (auto& v : t.values()) v = round_to(precision_, uniform(rng_, -bound, bound));
        params.add(name, std::move(t));
    }

    const ModelSpec& spec_;
    Rng rng_;
    Precision precision_;
    ParameterSet params;
    std::map<std::string, ops::BatchNormStats> bn;
};

}  // namespace

Model build_baseline_cnn(const ModelSpec& spec, std::uint64_t seed, Precision precision) {
    spec.validate();
    if (spec.input != InputKind::image) throw ValidationError("baseline cnn: input must be an image");
    if (spec.channel_plan.size() != 4) {
        throw ValidationError("baseline cnn: channel plan must list 4 blocks, got " +
                              std::to_string(spec.channel_plan.size()));
    }
    if (std::any_of(spec.channel_plan.begin(), spec.channel_plan.end(), [](auto c) { return c == 0; })) {
        throw ValidationError("baseline cnn: channel plan entries must be positive");
    }
    if (spec.height < 16 || spec.width < 16) {
        throw ShapeError("baseline cnn: input " + shape_str({spec.channels, spec.height, spec.width}) +
                         " cannot survive 4 poolings (needs at least 16x16)");
    }
    Builder b(spec, seed, precision);
    b.current = {spec.channels, spec.height, spec.width};
    for (std::size_t blk = 0; blk < 4; ++blk) {
        const std::string p = "block" + std::to_string(blk + 1);
        b.conv(p + ".conv1", spec.channel_plan[blk]);
        b.simple(LayerKind::relu, p + ".relu1");
        b.conv(p + ".conv2", spec.channel_plan[blk]);
        b.simple(LayerKind::relu, p + ".relu2");
        b.simple(LayerKind::maxpool2d, p + ".pool");
        b.batchnorm(p + ".bn");
        b.simple(LayerKind::dropout, p + ".dropout", spec.conv_dropout);
    }
    b.simple(LayerKind::flatten, "flatten");
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::string p = "dense" + std::to_string(i + 1);
        b.dense(p, spec.hidden[i], b.backbone);
        b.simple(LayerKind::relu, p + ".relu");
        b.simple(LayerKind::dropout, p + ".dropout", spec.dense_dropout);
    }
    b.heads();
    return b.finish();
}

Model build_mlp(const ModelSpec& spec, std::uint64_t seed, Precision precision) {
    spec.validate();
    if (spec.input != InputKind::vector) throw ValidationError("mlp: input must be a vector");
    Builder b(spec, seed, precision);
    b.current = {spec.dim};
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::string p = "dense" + std::to_string(i + 1);
        b.dense(p, spec.hidden[i], b.backbone);
        b.simple(LayerKind::relu, p + ".relu");
        if (spec.dense_dropout > 0.0) b.simple(LayerKind::dropout, p + ".dropout", spec.dense_dropout);
    }
    b.heads();
    return b.finish();
}

Model build_model(const ModelSpec& spec, std::uint64_t seed, Precision precision) {
    return spec.backbone == BackboneKind::baseline_cnn ? build_baseline_cnn(spec, seed, precision)
                                                       : build_mlp(spec, seed, precision);
}

std::vector<std::size_t> predict_expression(const Tensor& scores) {
    if (scores.rank() != 2) throw ShapeError("predict_expression: scores must be [batch, classes]");
    const std::size_t b = scores.dim(0), m = scores.dim(1);
    std::vector<std::size_t> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < m; ++j) {
            if (scores[i * m + j] > scores[i * m + best]) best = j;
        }
        out[i] = best;
    }
    return out;
}

std::vector<std::vector<std::uint8_t>> predict_au_from_probs(const Tensor& probs, double threshold) {
    if (probs.rank() != 2) throw ShapeError("predict_au: input must be [batch, units]");
    const std::size_t b = probs.dim(0), a = probs.dim(1);
    std::vector<std::vector<std::uint8_t>> out(b, std::vector<std::uint8_t>(a));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < a; ++j) out[i][j] = probs[i * a + j] >= threshold ? 1 : 0;
    return out;
}

std::vector<std::vector<std::uint8_t>> predict_au(const Tensor& logits, double threshold) {
    Tensor probs(logits.shape());
    for (std::size_t k = 0; k < logits.size(); ++k) probs[k] = ops::sigmoid(logits[k]);
    return predict_au_from_probs(probs, threshold);
}

std::size_t ddc_joint_index(std::size_t domain, std::size_t cls, std::size_t classes, std::size_t domains) {
    if (domain >= domains || cls >= classes) {
        throw IndexError("ddc_joint_index: (domain " + std::to_string(domain) + ", class " + std::to_string(cls) +
                         ") outside " + std::to_string(domains) + "x" + std::to_string(classes));
    }
    return domain * classes + cls;
}

std::pair<std::size_t, std::size_t> ddc_decode(std::size_t joint, std::size_t classes) {
    return {joint / classes, joint % classes};
}

Tensor ddc_reduce(const Tensor& joint_probs, std::size_t classes, DdcReduction rule) {
    if (joint_probs.rank() != 2 || classes == 0 || joint_probs.dim(1) % classes != 0) {
        throw ShapeError("ddc_reduce: width of " + shape_str(joint_probs.shape()) + " is not a multiple of " +
                         std::to_string(classes));
    }
    const std::size_t b = joint_probs.dim(0), w = joint_probs.dim(1), n = w / classes;
    Tensor out(Shape{b, classes});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
            double acc = rule == DdcReduction::sum ? 0.0 : joint_probs[i * w + c];
            for (std::size_t d = rule == DdcReduction::sum ? 0 : 1; d < n; ++d) {
                const double p = joint_probs[i * w + d * classes + c];
                acc = rule == DdcReduction::sum ? acc + p : std::max(acc, p);
            }
            out[i * classes + c] = acc;
        }
    }
    return out;
}

HeadFn dic_select_head(Model& model, std::size_t domain) {
    if (model.spec().head.kind != HeadKind::dic) throw ContractError("dic_select_head: model has no dic heads");
    if (domain >= model.head_count()) {
        throw IndexError("dic_select_head: domain " + std::to_string(domain) + " but model has " +
                         std::to_string(model.head_count()) + " heads");
    }
    return [&model, domain](Graph& g, Var features) { return model.head(g, features, domain); };
}

}  // namespace faircl
