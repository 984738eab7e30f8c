#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "faircl/autodiff/gradcheck.hpp"
#include "faircl/autodiff/ops.hpp"
#include "faircl/error.hpp"

namespace faircl::test {

namespace fs = std::filesystem;

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

namespace {

Var weighted_sum(Graph& g, Var out, std::uint64_t weight_seed) {
    Rng rng(weight_seed);
    const Var w = g.constant(random_tensor(rng, g.shape(out), 0.5, 1.5));
    return ops::sum(g, ops::mul(g, out, w));
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

/// Values bounded away from zero, so relu and friends are not probed at a kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) {
        const double mag = uniform(rng, 0.1, 1.0);
        v = uniform(rng, 0.0, 1.0) < 0.5 ? -mag : mag;
    }
    return t;
}

Var prim(Graph& g, ops::Primitive p, std::vector<Var> in, const ops::OpAttrs& attrs = {}) {
    return ops::apply_primitive(g, p, in, attrs);
}

}  // namespace

double gradient_error(ParameterSet& params, const Builder& build, std::uint64_t weight_seed) {
    auto bind = [&](Graph& g, ParameterSet& p) {
        std::vector<Var> leaves;
        for (auto& e : p) leaves.push_back(g.parameter(e.tensor));
        return weighted_sum(g, build(g, leaves), weight_seed);
    };
    params.zero_grad();
    {
        Graph g;
        g.backward(bind(g, params));
    }
    const auto analytic = params.grads();
    const auto numeric = finite_difference_gradient(
        [&](ParameterSet& p) {
            Graph g;
            return g.value(bind(g, p)).item();
        },
        params, 1e-5);
    return max_relative_error(analytic, numeric);
}

std::vector<std::string> gradient_ops() {
    std::vector<std::string> names;
    for (int p = 0; p <= static_cast<int>(ops::Primitive::gather_rows); ++p) {
        names.emplace_back(ops::primitive_name(static_cast<ops::Primitive>(p)));
    }
    names.emplace_back("softmax_cross_entropy");
    names.emplace_back("sigmoid_bce");
    return names;
}

std::vector<double> gradient_trials(const std::string& op, std::size_t trials, std::uint64_t seed) {
    using ops::Primitive;
    std::vector<double> errors;
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        ParameterSet ps;
        Builder build;
        if (op == "matmul") {
            const auto n = pick(rng, 1, 5), k = pick(rng, 1, 5), m = pick(rng, 1, 5);
            ps.add("a", random_tensor(rng, {n, k}));
            ps.add("b", random_tensor(rng, {k, m}));
            build = [](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::matmul, {v[0], v[1]}); };
        } else if (op == "add_bias") {
            const auto n = pick(rng, 1, 4), c = pick(rng, 1, 4);
            Shape shape = t % 2 ? Shape{n, c, pick(rng, 1, 4), pick(rng, 1, 4)} : Shape{n, c};
            ps.add("x", random_tensor(rng, shape));
            ps.add("bias", random_tensor(rng, {c}));
            build = [](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::add_bias, {v[0], v[1]}); };
        } else if (op == "conv2d") {
            ops::OpAttrs attrs;
            attrs.conv.stride = pick(rng, 1, 2);
            attrs.conv.padding = pick(rng, 0, 1);
            const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
            const auto h = pick(rng, 3, 6), w = pick(rng, 3, 6), k = pick(rng, 1, 3);
            ps.add("x", random_tensor(rng, {n, c, h, w}));
            ps.add("kernel", random_tensor(rng, {o, c, k, k}));
            build = [attrs](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::conv2d, {v[0], v[1]}, attrs); };
        } else if (op == "maxpool2d") {
            ops::OpAttrs attrs;
            attrs.pool.kernel = pick(rng, 1, 3);
            attrs.pool.stride = pick(rng, 1, 2);
            const auto h = pick(rng, attrs.pool.kernel, 6), w = pick(rng, attrs.pool.kernel, 6);
            ps.add("x", random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 2), h, w}));
            build = [attrs](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::maxpool2d, {v[0]}, attrs); };
        } else if (op == "relu") {
            ps.add("x", away_from_zero(rng, {pick(rng, 1, 4), pick(rng, 1, 6)}));
            build = [](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::relu, {v[0]}); };
        } else if (op == "batchnorm") {
            const bool training = t % 3 != 2;
            const auto n = pick(rng, 2, 5), c = pick(rng, 1, 3);
            Shape shape = t % 2 ? Shape{n, c, pick(rng, 1, 3), pick(rng, 1, 3)} : Shape{n, c};
            ps.add("x", random_tensor(rng, shape));
            ps.add("gamma", random_tensor(rng, {c}, 0.5, 1.5));
            ps.add("beta", random_tensor(rng, {c}));
            auto running = ops::BatchNormStats::fresh(c);
            for (std::size_t i = 0; i < c; ++i) {
                running.running_mean[i] = uniform(rng, -0.5, 0.5);
                running.running_var[i] = uniform(rng, 0.5, 2.0);
            }
            build = [training, running](Graph& g, std::vector<Var>& v) {
                auto stats = running;
                ops::OpAttrs attrs;
                attrs.batchnorm.training = training;
                attrs.batchnorm.stats = &stats;
                return prim(g, Primitive::batchnorm, {v[0], v[1], v[2]}, attrs);
            };
        } else if (op == "dropout") {
            const double rate = uniform(rng, 0.1, 0.6);
            const std::uint64_t mask_seed = rng();
            ps.add("x", random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 6)}));
            build = [rate, mask_seed](Graph& g, std::vector<Var>& v) {
                Rng mask(mask_seed);
                ops::OpAttrs attrs;
                attrs.dropout = {rate, true, &mask};
                return prim(g, Primitive::dropout, {v[0]}, attrs);
            };
        } else if (op == "flatten") {
            ps.add("x", random_tensor(rng, {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}));
            build = [](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::flatten, {v[0]}); };
        } else if (op == "add" || op == "mul") {
            const Shape shape{pick(rng, 1, 4), pick(rng, 1, 4)};
            ps.add("a", random_tensor(rng, shape));
            ps.add("b", random_tensor(rng, shape));
            const auto p = op == "add" ? Primitive::add : Primitive::mul;
            build = [p](Graph& g, std::vector<Var>& v) { return prim(g, p, {v[0], v[1]}); };
        } else if (op == "sum") {
            ps.add("x", random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 3)}));
            build = [](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::sum, {v[0]}); };
        } else if (op == "scale") {
            ops::OpAttrs attrs;
            attrs.factor = uniform(rng, -3.0, 3.0);
            ps.add("x", random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 4)}));
            build = [attrs](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::scale, {v[0]}, attrs); };
        } else if (op == "gather_rows") {
            const auto n = pick(rng, 1, 5);
            ps.add("x", random_tensor(rng, t % 2 ? Shape{n, pick(rng, 1, 3), pick(rng, 1, 3)} : Shape{n, pick(rng, 1, 4)}));
            ops::OpAttrs attrs;
            for (std::size_t i = 0, k = pick(rng, 1, 6); i < k; ++i) attrs.rows.push_back(uniform_index(rng, n));
            build = [attrs](Graph& g, std::vector<Var>& v) { return prim(g, Primitive::gather_rows, {v[0]}, attrs); };
        } else if (op == "softmax_cross_entropy") {
            const auto b = pick(rng, 1, 5), m = pick(rng, 2, 6);
            ps.add("logits", random_tensor(rng, {b, m}, -3.0, 3.0));
            std::vector<std::size_t> targets;
            std::vector<double> weights;
            for (std::size_t i = 0; i < b; ++i) {
                targets.push_back(uniform_index(rng, m));
                if (t % 2) weights.push_back(uniform(rng, 0.2, 3.0));
            }
            build = [targets, weights](Graph& g, std::vector<Var>& v) {
                return ops::softmax_cross_entropy(g, v[0], targets, weights);
            };
        } else if (op == "sigmoid_bce") {
            const auto b = pick(rng, 1, 5), a = pick(rng, 1, 6);
            ps.add("logits", random_tensor(rng, {b, a}, -3.0, 3.0));
            Tensor targets({b, a});
            for (auto& v : targets.values()) v = static_cast<double>(uniform_index(rng, 2));
            std::vector<double> weights;
            if (t % 2) {
                for (std::size_t i = 0; i < b; ++i) weights.push_back(uniform(rng, 0.2, 3.0));
            }
            build = [targets, weights](Graph& g, std::vector<Var>& v) {
                return ops::sigmoid_bce(g, v[0], targets, weights);
            };
        } else {
            throw ContractError("gradient_trials: unknown op '" + op + "'");
        }
        errors.push_back(gradient_error(ps, build, rng()));
    }
    return errors;
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("faircl-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

Sample vector_sample(std::vector<double> features, std::size_t cls, std::string domain, Split split) {
    Sample s;
    s.shape = {features.size()};
    s.features = std::move(features);
    s.label = cls;
    s.domain = std::move(domain);
    s.split = split;
    return s;
}

std::vector<Episode> small_stream(std::size_t samples, std::uint64_t seed, double shift, std::vector<double> ratios) {
    SynthConfig sc;
    sc.samples = samples;
    sc.seed = seed;
    sc.shift = shift;
    sc.domains = ratios.size();
    sc.ratios = std::move(ratios);
    return split_episodes(synth_generate(sc));
}

ModelSpec mlp_spec_for(std::span<const Episode> episodes, std::vector<std::size_t> hidden, HeadSpec head) {
    ModelSpec spec;
    spec.input = InputKind::vector;
    spec.backbone = BackboneKind::mlp;
    spec.dim = episodes.front().train.front().features.size();
    spec.hidden = std::move(hidden);
    spec.dense_dropout = 0.0;
    spec.task = TaskSpec{TaskKind::expression, 5};
    spec.head = head;
    return spec;
}

std::vector<std::string> architecture_violations(const Model& model) {
    std::vector<std::string> issues;
    std::vector<LayerKind> expect;
    for (int b = 0; b < 4; ++b) {
        expect.insert(expect.end(), {LayerKind::conv2d, LayerKind::relu, LayerKind::conv2d, LayerKind::relu,
                                     LayerKind::maxpool2d, LayerKind::batchnorm, LayerKind::dropout});
    }
    expect.push_back(LayerKind::flatten);
    for (int d = 0; d < 2; ++d) expect.insert(expect.end(), {LayerKind::dense, LayerKind::relu, LayerKind::dropout});
    const auto& layers = model.backbone_layers();
    if (layers.size() != expect.size()) {
        issues.push_back("backbone has " + std::to_string(layers.size()) + " layers, expected " +
                         std::to_string(expect.size()));
    }
    for (std::size_t i = 0; i < std::min(layers.size(), expect.size()); ++i) {
        if (layers[i].kind != expect[i]) {
            issues.push_back("layer " + std::to_string(i) + " (" + layers[i].name + ") is " +
                             std::string(layer_kind_name(layers[i].kind)) + ", expected " +
                             std::string(layer_kind_name(expect[i])));
        }
    }
    std::size_t dense = 0;
    for (const auto& l : layers) dense += l.kind == LayerKind::dense;
    for (const auto& h : model.heads()) {
        if (h.kind != LayerKind::dense) issues.push_back("head " + h.name + " is not a dense layer");
    }
    if (dense + 1 != 3) issues.push_back("expected 3 dense layers including the head, found " + std::to_string(dense + 1));

    const auto& spec = model.spec();
    const std::size_t width = spec.head.kind == HeadKind::ddc ? spec.head.num_domains * spec.task.outputs
                                                              : spec.task.outputs;
    const std::size_t count = spec.head.kind == HeadKind::dic ? spec.head.num_domains : 1;
    if (model.head_count() != count) issues.push_back("head count " + std::to_string(model.head_count()));
    std::vector<std::string> head_tensors;
    for (std::size_t h = 0; h < model.head_count(); ++h) {
        if (model.heads()[h].output_shape != Shape{width}) {
            issues.push_back("head " + std::to_string(h) + " width " + shape_str(model.heads()[h].output_shape) +
                             ", expected " + std::to_string(width));
        }
        for (const auto& name : model.head_parameter_names(h)) {
            if (std::find(head_tensors.begin(), head_tensors.end(), name) != head_tensors.end()) {
                issues.push_back("tensor " + name + " shared between heads");
            }
            head_tensors.push_back(name);
        }
    }
    std::vector<std::string> trunk_tensors;
    for (const auto& l : layers) {
        if (!l.weight.empty()) trunk_tensors.push_back(l.weight);
        if (!l.bias.empty()) trunk_tensors.push_back(l.bias);
    }
    for (const auto& e : model.params()) {
        const bool in_head = std::find(head_tensors.begin(), head_tensors.end(), e.name) != head_tensors.end();
        const bool in_trunk = std::find(trunk_tensors.begin(), trunk_tensors.end(), e.name) != trunk_tensors.end();
        if (in_head == in_trunk) issues.push_back("tensor " + e.name + " is not owned by exactly one of trunk/heads");
    }
    return issues;
}

fs::path source_dir() { return FAIRCL_SOURCE_DIR; }

}  // namespace faircl::test
