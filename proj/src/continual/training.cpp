#include "faircl/continual/training.hpp"

#include <algorithm>
#include <numeric>

#include "faircl/autodiff/ops.hpp"
#include "faircl/error.hpp"

namespace faircl {

namespace {

constexpr Method kMethods[] = {Method::finetune, Method::offline,    Method::ddc, Method::dic, Method::strategic_sampling,
                               Method::ewc,      Method::ewc_online, Method::si,  Method::mas, Method::naive_rehearsal};

}  // namespace

std::string_view method_name(Method m) noexcept {
    switch (m) {
        case Method::finetune: return "finetune";
        case Method::offline: return "offline";
        case Method::ddc: return "ddc";
        case Method::dic: return "dic";
        case Method::strategic_sampling: return "strategic_sampling";
        case Method::ewc: return "ewc";
        case Method::ewc_online: return "ewc_online";
        case Method::si: return "si";
        case Method::mas: return "mas";
        case Method::naive_rehearsal: return "naive_rehearsal";
    }
    return "finetune";
}

Method parse_method(std::string_view text) {
    for (auto m : kMethods) {
        if (method_name(m) == text) return m;
    }
    throw ValidationError("unknown method '" + std::string(text) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods(std::begin(kMethods), std::end(kMethods));
    return methods;
}

bool is_incremental(Method m) noexcept {
    switch (m) {
        case Method::finetune:
        case Method::ewc:
        case Method::ewc_online:
        case Method::si:
        case Method::mas:
        case Method::naive_rehearsal: return true;
        default: return false;
    }
}

RegMethod regularizer_of(Method m) noexcept {
    switch (m) {
        case Method::ewc: return RegMethod::ewc;
        case Method::ewc_online: return RegMethod::ewc_online;
        case Method::si: return RegMethod::si;
        case Method::mas: return RegMethod::mas;
        case Method::naive_rehearsal: return RegMethod::naive_rehearsal;
        default: return RegMethod::none;
    }
}

HeadKind head_of(Method m) noexcept {
    if (m == Method::ddc) return HeadKind::ddc;
    if (m == Method::dic) return HeadKind::dic;
    return HeadKind::standard;
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ValidationError("epochs must be >= 1");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
    if (eval_batch == 0) throw ValidationError("eval_batch must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
}

std::map<std::string, std::size_t> domain_indices(std::span<const Episode> episodes) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < episodes.size(); ++i) idx.emplace(episodes[i].domain, i);
    return idx;
}

namespace {

using SampleRefs = std::vector<const Sample*>;

std::size_t lookup_domain(const std::map<std::string, std::size_t>& index, const std::string& domain) {
    auto it = index.find(domain);
    if (it == index.end()) throw ValidationError("domain '" + domain + "' is not part of the stream");
    return it->second;
}

Batch build_batch(const SampleRefs& samples, const TaskSpec& task, const std::map<std::string, std::size_t>& index) {
    if (samples.empty()) throw ContractError("make_batch: empty batch");
    const auto& shape = samples.front()->shape;
    Shape full{samples.size()};
    full.insert(full.end(), shape.begin(), shape.end());
    const std::size_t per = shape_size(shape);
    std::vector<double> values(samples.size() * per);
    Batch b;
    if (task.kind == TaskKind::action_units) b.units = Tensor({samples.size(), task.outputs});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = *samples[i];
        if (s.shape != shape) throw ShapeError("make_batch: samples have different shapes");
        std::copy(s.features.begin(), s.features.end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
        if (task.kind == TaskKind::expression) {
            b.classes.push_back(class_of(s.label));
        } else {
            const auto& u = units_of(s.label);
            if (u.size() != task.outputs) throw ShapeError("make_batch: AU label width mismatch");
            for (std::size_t a = 0; a < u.size(); ++a) b.units[i * task.outputs + a] = u[a];
        }
        b.domains.push_back(index.empty() ? 0 : lookup_domain(index, s.domain));
    }
    b.inputs = Tensor(std::move(full), std::move(values));
    return b;
}

Var head_loss(Graph& g, Var logits, const TaskSpec& task, std::span<const std::size_t> classes, const Tensor& units,
              std::span<const double> weights) {
    if (task.kind == TaskKind::expression) return ops::softmax_cross_entropy(g, logits, classes, weights);
    return ops::sigmoid_bce(g, logits, units, weights);
}

}  // namespace

Batch make_batch(std::span<const Sample> samples, const TaskSpec& task,
                 const std::map<std::string, std::size_t>& domain_index) {
    SampleRefs refs;
    for (const auto& s : samples) refs.push_back(&s);
    return build_batch(refs, task, domain_index);
}

Var task_loss(Graph& g, Model& model, const Batch& batch, Model::Mode mode) {
    const auto& spec = model.spec();
    const auto& task = spec.task;
    const std::size_t B = batch.inputs.dim(0);
    const Var x = g.constant(batch.inputs);
    switch (spec.head.kind) {
        case HeadKind::standard:
            return head_loss(g, model.forward(g, x, mode), task, batch.classes, batch.units, batch.weights);
        case HeadKind::ddc: {
            const std::size_t N = spec.head.num_domains, M = task.outputs;
            const Var logits = model.forward(g, x, mode);
            if (task.kind == TaskKind::expression) {
                std::vector<std::size_t> joint(B);
                for (std::size_t i = 0; i < B; ++i) joint[i] = ddc_joint_index(batch.domains[i], batch.classes[i], M, N);
                return ops::softmax_cross_entropy(g, logits, joint, batch.weights);
            }
            Tensor targets({B, N * M});
            for (std::size_t i = 0; i < B; ++i) {
                const std::size_t d = batch.domains[i];
                if (d >= N) throw IndexError("ddc: domain index " + std::to_string(d) + " outside " + std::to_string(N));
                for (std::size_t a = 0; a < M; ++a) targets[i * N * M + d * M + a] = batch.units[i * M + a];
            }
            return ops::sigmoid_bce(g, logits, targets, batch.weights);
        }
        case HeadKind::dic: {
            const Var feat = model.features(g, x, mode);
            std::map<std::size_t, std::vector<std::size_t>> rows;
            for (std::size_t i = 0; i < B; ++i) rows[batch.domains[i]].push_back(i);
            Var total{};
            bool first = true;
            for (const auto& [d, r] : rows) {
                std::vector<std::size_t> classes;
                std::vector<double> weights;
                Tensor units;
                if (task.kind == TaskKind::expression) {
                    for (auto i : r) classes.push_back(batch.classes[i]);
                } else {
                    units = Tensor({r.size(), task.outputs});
                    for (std::size_t k = 0; k < r.size(); ++k) {
                        for (std::size_t a = 0; a < task.outputs; ++a) {
                            units[k * task.outputs + a] = batch.units[r[k] * task.outputs + a];
                        }
                    }
                }
                if (!batch.weights.empty()) {
                    for (auto i : r) weights.push_back(batch.weights[i]);
                }
                const Var logits = model.head(g, ops::gather_rows(g, feat, r), d);
                const Var part = ops::scale(g, head_loss(g, logits, task, classes, units, weights),
                                            static_cast<double>(r.size()) / static_cast<double>(B));
                total = first ? part : ops::add(g, total, part);
                first = false;
            }
            return total;
        }
    }
    throw ContractError("task_loss: unknown head kind");
}

namespace {

std::vector<Label> labels_from_scores(const Model& model, const Tensor& scores, const TrainConfig& cfg) {
    const auto& spec = model.spec();
    const auto& task = spec.task;
    std::vector<Label> out;
    if (spec.head.kind == HeadKind::ddc) {
        Tensor probs = task.kind == TaskKind::expression ? ops::softmax_rows(scores) : Tensor(scores.shape());
        if (task.kind == TaskKind::action_units) {
            for (std::size_t i = 0; i < scores.size(); ++i) probs[i] = ops::sigmoid(scores[i]);
        }
        const Tensor reduced = ddc_reduce(probs, task.outputs, cfg.ddc_rule);
        if (task.kind == TaskKind::expression) {
            for (auto c : predict_expression(reduced)) out.emplace_back(c);
        } else {
            for (auto& u : predict_au_from_probs(reduced)) out.emplace_back(std::move(u));
        }
        return out;
    }
    if (task.kind == TaskKind::expression) {
        for (auto c : predict_expression(scores)) out.emplace_back(c);
    } else {
        for (auto& u : predict_au(scores)) out.emplace_back(std::move(u));
    }
    return out;
}

}  // namespace

std::vector<Label> predict(Model& model, std::span<const Sample> samples,
                           const std::map<std::string, std::size_t>& domain_index, const TrainConfig& cfg) {
    std::vector<Label> out(samples.size());
    const bool dic = model.spec().head.kind == HeadKind::dic;
    for (std::size_t start = 0; start < samples.size(); start += cfg.eval_batch) {
        const std::size_t n = std::min(cfg.eval_batch, samples.size() - start);
        const auto chunk = samples.subspan(start, n);
        const Batch b = make_batch(chunk, model.spec().task, dic ? domain_index : std::map<std::string, std::size_t>{});
        Graph g(cfg.precision);
        const Var x = g.constant(b.inputs);
        if (!dic) {
            auto labels = labels_from_scores(model, g.value(model.forward(g, x, Model::Mode{})), cfg);
            std::move(labels.begin(), labels.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
            continue;
        }
        const Var feat = model.features(g, x, Model::Mode{});
        std::map<std::size_t, std::vector<std::size_t>> rows;
        for (std::size_t i = 0; i < n; ++i) rows[b.domains[i]].push_back(i);
        for (const auto& [d, r] : rows) {
            auto labels = labels_from_scores(model, g.value(model.head(g, ops::gather_rows(g, feat, r), d)), cfg);
            for (std::size_t k = 0; k < r.size(); ++k) out[start + r[k]] = std::move(labels[k]);
        }
    }
    return out;
}

std::vector<EvaluationRecord> evaluate(Model& model, std::span<const Episode> episodes, const TrainConfig& cfg,
                                       AttributeKind attribute) {
    const auto index = domain_indices(episodes);
    std::vector<EvaluationRecord> records;
    for (const auto& ep : episodes) {
        const auto preds = predict(model, ep.test, index, cfg);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            records.push_back(EvaluationRecord{preds[i], ep.test[i].label, ep.test[i].domain, attribute});
        }
    }
    return records;
}

std::map<std::string, double> domain_accuracy(Model& model, std::span<const Episode> episodes,
                                              const TrainConfig& cfg) {
    const auto records = evaluate(model, episodes, cfg, AttributeKind::custom);
    std::map<std::string, double> acc;
    if (records.empty()) return acc;
    const auto tables = per_domain_accuracy(records);
    for (const auto& t : tables) {
        for (const auto& [d, v] : t.entries) acc[d] += v / static_cast<double>(tables.size());
    }
    return acc;
}

std::map<std::string, double> strategic_weights(const std::map<std::string, std::size_t>& counts) {
    if (counts.empty()) throw ValidationError("strategic_weights: no domains");
    std::size_t total = 0;
    for (const auto& [d, n] : counts) {
        if (n == 0) throw ValidationError("strategic_weights: domain '" + d + "' has no samples");
        total += n;
    }
    const double K = static_cast<double>(counts.size());
    std::map<std::string, double> w;
    for (const auto& [d, n] : counts) w[d] = static_cast<double>(total) / (K * static_cast<double>(n));
    return w;
}

namespace {

/// Optimizer, RNG streams and the single-step update shared by all trainers.
class Stepper {
public:
    Stepper(Model& model, const TrainConfig& cfg, std::uint64_t seed, std::map<std::string, std::size_t> index)
        : model_(model),
          cfg_(cfg),
          rng_(mix_seed(seed, 1)),
          aug_rng_(mix_seed(seed, 3)),
          opt_(cfg.optimizer, cfg.precision),
          index_(std::move(index)) {}

    Rng& rng() noexcept { return rng_; }

    struct Losses {
        double task = 0.0;
        double penalty = 0.0;
    };

    Losses step(const SampleRefs& batch_refs, std::span<const double> weights, RegularizerState* reg) {
        std::vector<Sample> augmented;
        SampleRefs refs = batch_refs;
        if (cfg_.augment.enabled) {
            augmented.reserve(refs.size());
            for (const auto* s : refs) augmented.push_back(augment(*s, cfg_.augment, aug_rng_));
            for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = &augmented[i];
        }
        auto& params = model_.params();
        params.zero_grad();
        Batch b = build_batch(refs, model_.spec().task, needs_domains() ? index_ : std::map<std::string, std::size_t>{});
        b.weights.assign(weights.begin(), weights.end());
        Losses out;
        {
            Graph g(cfg_.precision);
            const Var loss = task_loss(g, model_, b, Model::Mode{true, &rng_});
            out.task = g.value(loss).item();
            g.backward(loss);
        }
        const bool si = reg && reg->method == RegMethod::si;
        ParamArrays task_grad, before;
        if (si) {
            task_grad = params.grads();
            before = params.values();
        }
        if (reg && !reg->anchors.empty()) {
            Graph g(cfg_.precision);
            const Var pen = penalty_quadratic(g, *reg, params);
            out.penalty = g.value(pen).item();
            g.backward(pen);
        }
        opt_.step(params);
        if (si) {
            ParamArrays delta = params.values();
            for (std::size_t k = 0; k < delta.size(); ++k) {
                for (std::size_t i = 0; i < delta[k].size(); ++i) delta[k][i] -= before[k][i];
            }
            si_accumulate_step(*reg, task_grad, delta);
        }
        if (cfg_.checksum_log) dump_checksums(*cfg_.checksum_log, opt_.step_count(), params);
        return out;
    }

private:
    bool needs_domains() const noexcept { return model_.spec().head.kind != HeadKind::standard; }

    Model& model_;
    const TrainConfig& cfg_;
    Rng rng_;
    Rng aug_rng_;
    OptimizerState opt_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace

IncrementalResult train_domain_incremental(Model& model, std::span<const Episode> episodes, Method method,
                                           const MethodConfig& hyper, const TrainConfig& cfg, std::uint64_t seed) {
    if (!is_incremental(method)) {
        throw ContractError("train_domain_incremental: '" + std::string(method_name(method)) + "' is not incremental");
    }
    if (episodes.empty()) throw ContractError("train_domain_incremental: no episodes");
    if (model.spec().head.kind != HeadKind::standard) {
        throw ContractError("train_domain_incremental: a single shared head is required");
    }
    cfg.validate();
    const RegMethod rm = regularizer_of(method);
    IncrementalResult result;
    result.state = make_regularizer(rm, hyper);
    result.buffer = ReplayBuffer(rm == RegMethod::naive_rehearsal ? hyper.buffer_capacity : 0, mix_seed(seed, 2));
    result.history.seed = seed;
    auto& state = result.state;
    auto& buffer = result.buffer;
    Stepper stepper(model, cfg, seed, domain_indices(episodes));

    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& ep = episodes[e];
        EpisodeRecord rec;
        rec.episode = e;
        rec.domain = ep.domain;
        if (ep.train.empty()) {
            result.history.warnings.push_back("episode " + std::to_string(e) + " (" + ep.domain +
                                              ") has no training samples; skipped");
            rec.accuracy = domain_accuracy(model, episodes, cfg);
            result.history.episodes.push_back(std::move(rec));
            continue;
        }
        if (rm == RegMethod::si) si_begin_episode(state, model.params());
        std::vector<std::size_t> order(ep.train.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), stepper.rng());
            const bool mixing = !buffer.slots.empty();
            const std::size_t chunk = mixing ? std::max<std::size_t>(1, cfg.batch_size / 2) : cfg.batch_size;
            double task_sum = 0.0, pen_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += chunk) {
                const std::size_t n = std::min(chunk, order.size() - start);
                SampleRefs refs;
                std::vector<Sample> mixed;
                if (mixing) {
                    std::vector<Sample> current;
                    current.reserve(n);
                    for (std::size_t k = 0; k < n; ++k) current.push_back(ep.train[order[start + k]]);
                    mixed = buffer_minibatch(buffer, current, 2 * chunk);
                    for (const auto& s : mixed) refs.push_back(&s);
                } else {
                    for (std::size_t k = 0; k < n; ++k) refs.push_back(&ep.train[order[start + k]]);
                }
                const auto losses = stepper.step(refs, {}, rm == RegMethod::naive_rehearsal ? nullptr : &state);
                task_sum += losses.task;
                pen_sum += losses.penalty;
                ++batches;
            }
            rec.final_task_loss = task_sum / static_cast<double>(batches);
            rec.final_penalty = pen_sum / static_cast<double>(batches);
            rec.epochs = epoch + 1;
        }
        switch (rm) {
            case RegMethod::ewc:
            case RegMethod::ewc_online: consolidate_ewc(state, model, ep.train, e, cfg.precision); break;
            case RegMethod::si: si_consolidate(state, model.params(), e); break;
            case RegMethod::mas: consolidate_mas(state, model, ep.train, e, cfg.precision); break;
            case RegMethod::naive_rehearsal: {
                std::vector<std::size_t> ins(ep.train.size());
                std::iota(ins.begin(), ins.end(), 0);
                std::shuffle(ins.begin(), ins.end(), buffer.rng);
                for (auto i : ins) buffer_insert(buffer, ep.train[i]);
                break;
            }
            case RegMethod::none: break;
        }
        rec.accuracy = domain_accuracy(model, episodes, cfg);
        result.history.episodes.push_back(std::move(rec));
    }
    return result;
}

TrainingHistory train_offline(Model& model, std::span<const Episode> episodes, const TrainConfig& cfg,
                              std::uint64_t seed, bool weighted) {
    cfg.validate();
    if (episodes.empty()) throw ContractError("train_offline: no episodes");
    SampleRefs pool;
    std::map<std::string, std::size_t> counts;
    for (const auto& ep : episodes) {
        for (const auto& s : ep.train) pool.push_back(&s);
        if (!ep.train.empty()) counts[ep.domain] += ep.train.size();
    }
    if (pool.empty()) throw ContractError("train_offline: no training samples");
    std::vector<double> sample_weight;
    if (weighted) {
        const auto w = strategic_weights(counts);
        for (const auto* s : pool) sample_weight.push_back(w.at(s->domain));
    }
    TrainingHistory history;
    history.seed = seed;
    EpisodeRecord rec;
    rec.domain = "pooled";
    Stepper stepper(model, cfg, seed, domain_indices(episodes));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), stepper.rng());
        double task_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            SampleRefs refs;
            std::vector<double> weights;
            for (std::size_t k = 0; k < n; ++k) {
                refs.push_back(pool[order[start + k]]);
                if (weighted) weights.push_back(sample_weight[order[start + k]]);
            }
            task_sum += stepper.step(refs, weights, nullptr).task;
            ++batches;
        }
        rec.final_task_loss = task_sum / static_cast<double>(batches);
        rec.epochs = epoch + 1;
    }
    rec.accuracy = domain_accuracy(model, episodes, cfg);
    history.episodes.push_back(std::move(rec));
    return history;
}

}  // namespace faircl
