#include "faircl/continual/regularizer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <string>

#include "faircl/autodiff/ops.hpp"
#include "faircl/error.hpp"

namespace faircl {

std::string_view reg_method_name(RegMethod m) noexcept {
    switch (m) {
        case RegMethod::none: return "none";
        case RegMethod::ewc: return "ewc";
        case RegMethod::ewc_online: return "ewc_online";
        case RegMethod::si: return "si";
        case RegMethod::mas: return "mas";
        case RegMethod::naive_rehearsal: return "naive_rehearsal";
    }
    return "none";
}

void MethodConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be a finite value >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
    if (!(xi > 0.0)) throw ValidationError("xi must be > 0");
    if (!(c >= 0.0) || !std::isfinite(c)) throw ValidationError("c must be a finite value >= 0");
    if (fisher_sample_cap == 0) throw ValidationError("fisher_sample_cap must be >= 1");
}

MethodConfig MethodConfig::defaults_for(RegMethod m) {
    MethodConfig cfg;
    if (m == RegMethod::mas) cfg.lambda = 1.0;
    return cfg;
}

double RegularizerState::strength() const noexcept {
    return method == RegMethod::si ? hyper.c : hyper.lambda / 2.0;
}

RegularizerState make_regularizer(RegMethod method, const MethodConfig& hyper) {
    hyper.validate();
    RegularizerState s;
    s.method = method;
    s.hyper = hyper;
    return s;
}

namespace {

Tensor single_input(const Sample& s) {
    Shape shape{1};
    shape.insert(shape.end(), s.shape.begin(), s.shape.end());
    return Tensor(std::move(shape), s.features);
}

void require_standard_head(const Model& model, const char* who) {
    if (model.spec().head.kind == HeadKind::dic) {
        throw ContractError(std::string(who) + ": needs a single shared head");
    }
}

void add_squared(ParamArrays& acc, const ParameterSet& params, double scale) {
    std::size_t k = 0;
    for (const auto& e : params) {
        auto g = e.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = scale * g[i];
            acc[k][i] += v * v;
        }
        ++k;
    }
}

void add_abs(ParamArrays& acc, const ParameterSet& params) {
    std::size_t k = 0;
    for (const auto& e : params) {
        auto g = e.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) acc[k][i] += std::abs(g[i]);
        ++k;
    }
}

void divide(ParamArrays& acc, double n) {
    for (auto& a : acc) {
        for (auto& v : a) v /= n;
    }
}

void check_layout(const ParamArrays& arrays, const ParameterSet& params, const char* what) {
    if (arrays.size() != params.size()) throw ContractError(std::string(what) + ": parameter count mismatch");
    for (std::size_t k = 0; k < arrays.size(); ++k) {
        if (arrays[k].size() != params.entry(k).tensor.size()) {
            throw ContractError(std::string(what) + ": size mismatch for '" + params.entry(k).name + "'");
        }
    }
}

const ParamArrays& importance_of(const RegularizerState& state, const Anchor& a) {
    return state.method == RegMethod::ewc_online ? state.running_fisher : a.importance;
}

void set_single_anchor(RegularizerState& state, ParamArrays theta, ParamArrays importance, std::size_t episode) {
    state.anchors.clear();
    state.anchors.push_back(Anchor{episode, std::move(theta), std::move(importance)});
}

}  // namespace

ParamArrays empirical_fisher(Model& model, std::span<const Sample> data, std::size_t cap, Precision precision) {
    if (data.empty()) throw ContractError("consolidate_ewc: empty data");
    require_standard_head(model, "empirical_fisher");
    auto& params = model.params();
    ParamArrays fisher = params.zeros_like();
    const std::size_t n = std::min(cap, data.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = data[i];
        params.zero_grad();
        Graph g(precision);
        const Var logits = model.forward(g, g.constant(single_input(s)), Model::Mode{});
        double scale = 1.0;
        Var loss;
        if (is_class_label(s.label)) {
            const std::size_t target = class_of(s.label);
            loss = ops::softmax_cross_entropy(g, logits, std::span<const std::size_t>(&target, 1));
        } else {
            const auto& u = units_of(s.label);
            Tensor t({1, u.size()});
            for (std::size_t a = 0; a < u.size(); ++a) t[a] = u[a];
            loss = ops::sigmoid_bce(g, logits, t);
            // the loss is a mean over units; log p is the sum
            scale = static_cast<double>(u.size());
        }
        g.backward(loss);
        add_squared(fisher, params, scale);
    }
    params.zero_grad();
    divide(fisher, static_cast<double>(n));
    return fisher;
}

ParamArrays output_sensitivity(Model& model, std::span<const Sample> inputs, std::size_t cap, Precision precision) {
    if (inputs.empty()) throw ContractError("consolidate_mas: empty inputs");
    require_standard_head(model, "output_sensitivity");
    auto& params = model.params();
    ParamArrays omega = params.zeros_like();
    const std::size_t n = std::min(cap, inputs.size());
    for (std::size_t i = 0; i < n; ++i) {
        params.zero_grad();
        Graph g(precision);
        const Var f = model.forward(g, g.constant(single_input(inputs[i])), Model::Mode{});
        g.backward(ops::sum(g, ops::mul(g, f, f)));
        add_abs(omega, params);
    }
    params.zero_grad();
    divide(omega, static_cast<double>(n));
    return omega;
}

void consolidate_ewc(RegularizerState& state, Model& model, std::span<const Sample> data, std::size_t episode,
                     Precision precision) {
    auto fisher = empirical_fisher(model, data, state.hyper.fisher_sample_cap, precision);
    if (state.method == RegMethod::ewc_online) {
        update_ewc_online(state, fisher, model.params().values(), episode);
    } else {
        state.anchors.push_back(Anchor{episode, model.params().values(), std::move(fisher)});
    }
}

void update_ewc_online(RegularizerState& state, const ParamArrays& fisher_new, const ParamArrays& theta,
                       std::size_t episode) {
    if (state.running_fisher.empty()) {
        state.running_fisher = fisher_new;
    } else {
        if (state.running_fisher.size() != fisher_new.size()) throw ContractError("update_ewc_online: layout mismatch");
        for (std::size_t k = 0; k < fisher_new.size(); ++k) {
            auto& r = state.running_fisher[k];
            if (r.size() != fisher_new[k].size()) throw ContractError("update_ewc_online: layout mismatch");
            for (std::size_t i = 0; i < r.size(); ++i) r[i] = state.hyper.gamma * r[i] + fisher_new[k][i];
        }
    }
    set_single_anchor(state, theta, {}, episode);
}

void si_begin_episode(RegularizerState& state, const ParameterSet& params) {
    state.si_omega = params.zeros_like();
    state.si_start = params.values();
}

void si_accumulate_step(RegularizerState& state, const ParamArrays& task_grad, const ParamArrays& delta) {
    if (state.si_omega.size() != task_grad.size() || task_grad.size() != delta.size()) {
        throw ContractError("si_accumulate_step: layout mismatch");
    }
    for (std::size_t k = 0; k < delta.size(); ++k) {
        auto& w = state.si_omega[k];
        if (w.size() != task_grad[k].size() || w.size() != delta[k].size()) {
            throw ContractError("si_accumulate_step: layout mismatch");
        }
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= task_grad[k][i] * delta[k][i];
    }
}

void si_consolidate(RegularizerState& state, const ParameterSet& params, std::size_t episode) {
    check_layout(state.si_omega, params, "si_consolidate");
    check_layout(state.si_start, params, "si_consolidate");
    ParamArrays omega = state.anchors.empty() ? params.zeros_like() : state.anchors.front().importance;
    std::size_t k = 0;
    for (const auto& e : params) {
        auto theta = e.tensor.values();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double d = theta[i] - state.si_start[k][i];
            // a negative path integral carries no importance
            omega[k][i] += std::max(0.0, state.si_omega[k][i]) / (d * d + state.hyper.xi);
        }
        ++k;
    }
    set_single_anchor(state, params.values(), std::move(omega), episode);
    si_begin_episode(state, params);
}

void consolidate_mas(RegularizerState& state, Model& model, std::span<const Sample> inputs, std::size_t episode,
                     Precision precision) {
    auto fresh = output_sensitivity(model, inputs, state.hyper.fisher_sample_cap, precision);
    if (!state.anchors.empty()) {
        const auto& prev = state.anchors.front().importance;
        for (std::size_t k = 0; k < fresh.size(); ++k) {
            for (std::size_t i = 0; i < fresh[k].size(); ++i) fresh[k][i] += prev[k][i];
        }
    }
    set_single_anchor(state, model.params().values(), std::move(fresh), episode);
}

double penalty_value(const RegularizerState& state, const ParameterSet& params) {
    double total = 0.0;
    for (const auto& a : state.anchors) {
        const auto& imp = importance_of(state, a);
        check_layout(a.theta, params, "penalty_quadratic");
        check_layout(imp, params, "penalty_quadratic");
        std::size_t k = 0;
        for (const auto& e : params) {
            auto theta = e.tensor.values();
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double d = theta[i] - a.theta[k][i];
                total += imp[k][i] * d * d;
            }
            ++k;
        }
    }
    return state.strength() * total;
}

Var penalty_quadratic(Graph& g, const RegularizerState& state, ParameterSet& params) {
    if (state.anchors.empty()) return g.constant(Tensor::scalar(0.0));
    const double value = penalty_value(state, params);
    std::vector<Var> inputs;
    inputs.reserve(params.size());
    for (auto& e : params) inputs.push_back(g.parameter(e.tensor));
    const RegularizerState* st = &state;
    return g.record("penalty_quadratic", Tensor::scalar(value), std::move(inputs), [st](BackwardContext& ctx) {
        const double scale = 2.0 * st->strength() * ctx.out_grad()[0];
        for (const auto& a : st->anchors) {
            const auto& imp = importance_of(*st, a);
            for (std::size_t k = 0; k < a.theta.size(); ++k) {
                if (!ctx.needs_grad(k)) continue;
                auto theta = ctx.input(k).values();
                auto dx = ctx.input_grad(k);
                for (std::size_t i = 0; i < theta.size(); ++i) dx[i] += scale * imp[k][i] * (theta[i] - a.theta[k][i]);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kSnapshotMagic = "faircl-regularizer";
constexpr int kSnapshotVersion = 1;

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void write_arrays(std::ostream& os, const std::string& group, const ParamArrays& arrays, const ParameterSet& layout) {
    for (std::size_t k = 0; k < arrays.size(); ++k) {
        const auto& e = layout.entry(k);
        os << "array " << group << ' ' << e.name << ' ';
        const auto& shape = e.tensor.shape();
        for (std::size_t d = 0; d < shape.size(); ++d) os << (d ? "x" : "") << shape[d];
        if (shape.empty()) os << "scalar";
        os << " :";
        for (double v : arrays[k]) os << ' ' << fmt(v);
        os << '\n';
    }
}

ParamArrays read_arrays(std::istream& is, const std::string& group, const ParameterSet& layout) {
    ParamArrays out;
    for (std::size_t k = 0; k < layout.size(); ++k) {
        std::string line;
        if (!std::getline(is, line)) throw ValidationError("snapshot: truncated in group " + group);
        std::istringstream ls(line);
        std::string tag, grp, name, shape, colon;
        ls >> tag >> grp >> name >> shape >> colon;
        const auto& e = layout.entry(k);
        if (tag != "array" || grp != group || name != e.name || colon != ":") {
            throw ValidationError("snapshot: expected array " + group + " " + e.name);
        }
        std::vector<double> values;
        std::string tok;
        while (ls >> tok) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || p != tok.data() + tok.size()) throw ValidationError("snapshot: bad value " + tok);
            values.push_back(v);
        }
        if (values.size() != e.tensor.size()) throw ValidationError("snapshot: wrong size for " + e.name);
        out.push_back(std::move(values));
    }
    return out;
}

RegMethod parse_reg_method(const std::string& s) {
    for (auto m : {RegMethod::none, RegMethod::ewc, RegMethod::ewc_online, RegMethod::si, RegMethod::mas,
                   RegMethod::naive_rehearsal}) {
        if (reg_method_name(m) == s) return m;
    }
    throw ValidationError("snapshot: unknown method " + s);
}

std::string expect_line(std::istream& is, const std::string& key) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("snapshot: missing " + key);
    if (line.rfind(key + ' ', 0) != 0) throw ValidationError("snapshot: expected " + key);
    return line.substr(key.size() + 1);
}

}  // namespace

void save_regularizer(std::ostream& os, const RegularizerState& state, const ParameterSet& layout) {
    os << kSnapshotMagic << ' ' << kSnapshotVersion << '\n';
    os << "method " << reg_method_name(state.method) << '\n';
    const auto& h = state.hyper;
    os << "hyper " << fmt(h.lambda) << ' ' << fmt(h.gamma) << ' ' << fmt(h.xi) << ' ' << fmt(h.c) << ' '
       << h.buffer_capacity << ' ' << h.fisher_sample_cap << '\n';
    os << "anchors " << state.anchors.size() << '\n';
    for (std::size_t a = 0; a < state.anchors.size(); ++a) {
        const auto& anchor = state.anchors[a];
        os << "anchor " << anchor.episode << ' ' << (anchor.importance.empty() ? 0 : 1) << '\n';
        write_arrays(os, "theta", anchor.theta, layout);
        if (!anchor.importance.empty()) write_arrays(os, "importance", anchor.importance, layout);
    }
    os << "running_fisher " << (state.running_fisher.empty() ? 0 : 1) << '\n';
    if (!state.running_fisher.empty()) write_arrays(os, "running_fisher", state.running_fisher, layout);
    os << "si " << (state.si_omega.empty() ? 0 : 1) << '\n';
    if (!state.si_omega.empty()) {
        write_arrays(os, "si_omega", state.si_omega, layout);
        write_arrays(os, "si_start", state.si_start, layout);
    }
}

RegularizerState load_regularizer(std::istream& is, const ParameterSet& layout) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("snapshot: empty input");
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kSnapshotMagic) throw ValidationError("snapshot: not a regularizer snapshot");
    if (version != kSnapshotVersion) throw ValidationError("snapshot: unsupported version " + std::to_string(version));
    RegularizerState state;
    state.method = parse_reg_method(expect_line(is, "method"));
    {
        std::istringstream hs(expect_line(is, "hyper"));
        std::string l, g, x, c;
        hs >> l >> g >> x >> c >> state.hyper.buffer_capacity >> state.hyper.fisher_sample_cap;
        auto num = [](const std::string& t) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc{} || p != t.data() + t.size()) throw ValidationError("snapshot: bad hyperparameter " + t);
            return v;
        };
        if (!hs) throw ValidationError("snapshot: bad hyper line");
        state.hyper.lambda = num(l);
        state.hyper.gamma = num(g);
        state.hyper.xi = num(x);
        state.hyper.c = num(c);
    }
    const auto anchors = std::stoul(expect_line(is, "anchors"));
    for (std::size_t a = 0; a < anchors; ++a) {
        std::istringstream as(expect_line(is, "anchor"));
        Anchor anchor;
        int has_importance = 0;
        as >> anchor.episode >> has_importance;
        anchor.theta = read_arrays(is, "theta", layout);
        if (has_importance) anchor.importance = read_arrays(is, "importance", layout);
        state.anchors.push_back(std::move(anchor));
    }
    if (expect_line(is, "running_fisher") == "1") state.running_fisher = read_arrays(is, "running_fisher", layout);
    if (expect_line(is, "si") == "1") {
        state.si_omega = read_arrays(is, "si_omega", layout);
        state.si_start = read_arrays(is, "si_start", layout);
    }
    return state;
}

}  // namespace faircl
