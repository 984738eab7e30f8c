#include "faircl/experiment/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace faircl {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
    throw ConfigError("config: " + field + ": " + what);
}

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(where.empty() ? key : where + "." + key, "unknown field");
    }
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

bool is_count(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::string field(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

double get_number(const json& obj, const std::string& where, const char* key, double fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) fail(field(where, key), "expected a number");
    return v->get<double>();
}

std::size_t get_count(const json& obj, const std::string& where, const char* key, std::size_t fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!is_count(*v)) fail(field(where, key), "expected a non-negative integer");
    return v->get<std::size_t>();
}

std::string get_string(const json& obj, const std::string& where, const char* key, std::string fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_string()) fail(field(where, key), "expected a string");
    return v->get<std::string>();
}

std::vector<double> get_numbers(const json& obj, const std::string& where, const char* key,
                                std::vector<double> fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_array()) fail(field(where, key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) fail(field(where, key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
    }
    return out;
}

std::vector<std::size_t> get_counts(const json& obj, const std::string& where, const char* key,
                                    std::vector<std::size_t> fallback) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_array()) fail(field(where, key), "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
        if (!is_count((*v)[i])) {
            fail(field(where, key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        }
        out.push_back((*v)[i].get<std::size_t>());
    }
    return out;
}

template <typename Fn>
void rethrow_as(const std::string& where, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const ValidationError& e) {
        fail(where, e.what());
    }
}

void parse_synth(const json& s, ExperimentConfig& cfg) {
    const std::string w = "dataset.synth";
    if (!s.is_object()) fail(w, "expected an object");
    reject_unknown(s, w, {"mode", "classes", "domains", "dim", "image_size", "samples", "ratios", "shift",
                          "offset_scale", "noise", "separation", "test_fraction", "seed"});
    auto& sc = cfg.synth;
    const auto mode = get_string(s, w, "mode", "vector");
    if (mode == "vector") sc.mode = SynthMode::vector;
    else if (mode == "image") sc.mode = SynthMode::image;
    else fail(w + ".mode", "expected vector or image");
    sc.domains = get_count(s, w, "domains", sc.domains);
    sc.dim = get_count(s, w, "dim", sc.dim);
    sc.image_size = get_count(s, w, "image_size", sc.image_size);
    sc.samples = get_count(s, w, "samples", sc.samples);
    if (!find(s, "ratios") && sc.domains != sc.ratios.size()) sc.ratios.assign(sc.domains, 1.0 / static_cast<double>(sc.domains));
    sc.ratios = get_numbers(s, w, "ratios", sc.ratios);
    sc.shift = get_number(s, w, "shift", sc.shift);
    sc.offset_scale = get_number(s, w, "offset_scale", sc.offset_scale);
    sc.noise = get_number(s, w, "noise", sc.noise);
    sc.separation = get_number(s, w, "separation", sc.separation);
    sc.test_fraction = get_number(s, w, "test_fraction", sc.test_fraction);
    sc.seed = get_count(s, w, "seed", sc.seed);
    const std::size_t default_outputs = cfg.task.kind == TaskKind::expression ? 5 : 12;
    sc.task = TaskSpec{cfg.task.kind, get_count(s, w, "classes", default_outputs)};
    rethrow_as(w, [&] { sc.validate(); });
}

void parse_manifest(const json& m, const std::filesystem::path& base, ExperimentConfig& cfg) {
    const std::string w = "dataset";
    reject_unknown(m, w, {"manifest", "channels", "height", "width", "test_fraction", "split_seed"});
    std::filesystem::path p = get_string(m, w, "manifest", "");
    if (p.empty()) fail(w + ".manifest", "must not be empty");
    cfg.manifest = p.is_absolute() || base.empty() ? p : base / p;
    auto& mo = cfg.manifest_options;
    mo.channels = get_count(m, w, "channels", mo.channels);
    mo.height = get_count(m, w, "height", mo.height);
    mo.width = get_count(m, w, "width", mo.width);
    mo.test_fraction = get_number(m, w, "test_fraction", mo.test_fraction);
    mo.split_seed = get_count(m, w, "split_seed", mo.split_seed);
    if (mo.channels != 1 && mo.channels != 3) fail(w + ".channels", "must be 1 or 3");
    if (!(mo.test_fraction > 0.0 && mo.test_fraction < 1.0)) fail(w + ".test_fraction", "must be in (0, 1)");
}

MethodSettings parse_method_entry(const json& e, const std::string& where) {
    MethodSettings ms;
    if (e.is_string()) {
        rethrow_as(where, [&] { ms.method = parse_method(e.get<std::string>()); });
        ms.hyper = MethodConfig::defaults_for(regularizer_of(ms.method));
        return ms;
    }
    if (!e.is_object()) fail(where, "expected a method name or object");
    reject_unknown(e, where, {"name", "lambda", "gamma", "xi", "c", "buffer_capacity", "fisher_sample_cap", "sweep"});
    const auto name = get_string(e, where, "name", "");
    rethrow_as(where + ".name", [&] { ms.method = parse_method(name); });
    auto& h = ms.hyper;
    h = MethodConfig::defaults_for(regularizer_of(ms.method));
    h.lambda = get_number(e, where, "lambda", h.lambda);
    h.gamma = get_number(e, where, "gamma", h.gamma);
    h.xi = get_number(e, where, "xi", h.xi);
    h.c = get_number(e, where, "c", h.c);
    h.buffer_capacity = get_count(e, where, "buffer_capacity", h.buffer_capacity);
    h.fisher_sample_cap = get_count(e, where, "fisher_sample_cap", h.fisher_sample_cap);
    rethrow_as(where, [&] { h.validate(); });
    ms.sweep = get_numbers(e, where, "sweep", {});
    if (!ms.sweep.empty()) {
        if (!swept_name(ms.method)[0]) fail(where + ".sweep", "method has no strength to sweep");
        for (std::size_t i = 0; i < ms.sweep.size(); ++i) {
            if (!(ms.sweep[i] >= 0.0)) fail(where + ".sweep[" + std::to_string(i) + "]", "must be >= 0");
        }
    }
    return ms;
}

void parse_model(const json& m, ExperimentConfig& cfg) {
    const std::string w = "model";
    if (!m.is_object()) fail(w, "expected an object");
    reject_unknown(m, w, {"backbone", "hidden", "channel_plan", "conv_dropout", "dense_dropout", "bn_momentum"});
    auto& ms = cfg.model;
    const auto backbone = get_string(m, w, "backbone", ms.backbone == BackboneKind::mlp ? "mlp" : "baseline_cnn");
    if (backbone == "mlp") ms.backbone = BackboneKind::mlp;
    else if (backbone == "baseline_cnn") ms.backbone = BackboneKind::baseline_cnn;
    else fail(w + ".backbone", "expected mlp or baseline_cnn");
    ms.hidden = get_counts(m, w, "hidden", ms.hidden);
    ms.channel_plan = get_counts(m, w, "channel_plan", ms.channel_plan);
    ms.conv_dropout = get_number(m, w, "conv_dropout", ms.conv_dropout);
    ms.dense_dropout = get_number(m, w, "dense_dropout", ms.dense_dropout);
    ms.bn_momentum = get_number(m, w, "bn_momentum", ms.bn_momentum);
}

void parse_training(const json& t, ExperimentConfig& cfg) {
    const std::string w = "training";
    if (!t.is_object()) fail(w, "expected an object");
    reject_unknown(t, w, {"epochs", "batch_size", "optimizer", "learning_rate", "precision", "ddc_rule", "augment"});
    auto& tc = cfg.training;
    tc.epochs = get_count(t, w, "epochs", tc.epochs);
    tc.batch_size = get_count(t, w, "batch_size", tc.batch_size);
    const auto opt = get_string(t, w, "optimizer", "adam");
    if (opt == "adam") tc.optimizer.kind = OptimizerKind::adam;
    else if (opt == "sgd") tc.optimizer.kind = OptimizerKind::sgd;
    else fail(w + ".optimizer", "expected adam or sgd");
    tc.optimizer.learning_rate = get_number(t, w, "learning_rate", tc.optimizer.learning_rate);
    const auto prec = get_string(t, w, "precision", "wide");
    if (prec == "wide") tc.precision = Precision::wide;
    else if (prec == "narrow") tc.precision = Precision::narrow;
    else fail(w + ".precision", "expected wide or narrow");
    const auto rule = get_string(t, w, "ddc_rule", "sum");
    if (rule == "sum") tc.ddc_rule = DdcReduction::sum;
    else if (rule == "max") tc.ddc_rule = DdcReduction::max;
    else fail(w + ".ddc_rule", "expected sum or max");
    if (const json* a = find(t, "augment")) {
        const std::string wa = w + ".augment";
        if (!a->is_object()) fail(wa, "expected an object");
        reject_unknown(*a, wa, {"flip_prob", "max_rotation_deg", "pixel_noise", "vector_jitter"});
        tc.augment.flip_prob = get_number(*a, wa, "flip_prob", tc.augment.flip_prob);
        tc.augment.max_rotation_deg = get_number(*a, wa, "max_rotation_deg", tc.augment.max_rotation_deg);
        tc.augment.pixel_noise = get_number(*a, wa, "pixel_noise", tc.augment.pixel_noise);
        tc.augment.vector_jitter = get_number(*a, wa, "vector_jitter", tc.augment.vector_jitter);
    }
    if (tc.epochs == 0) fail(w + ".epochs", "must be >= 1");
    if (tc.batch_size < 2) fail(w + ".batch_size", "must be >= 2");
    if (!(tc.optimizer.learning_rate > 0.0)) fail(w + ".learning_rate", "must be > 0");
}

}  // namespace

std::vector<bool> ExperimentConfig::augmentation_flags() const {
    switch (augmentation) {
        case AugMode::off: return {false};
        case AugMode::on: return {true};
        case AugMode::both: return {false, true};
    }
    return {false};
}

const char* swept_name(Method m) noexcept {
    switch (m) {
        case Method::ewc:
        case Method::ewc_online:
        case Method::mas: return "lambda";
        case Method::si: return "c";
        default: return "";
    }
}

double& swept_value(MethodSettings& m) { return m.method == Method::si ? m.hyper.c : m.hyper.lambda; }

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base) {
    if (!j.is_object()) fail("(root)", "expected an object");
    reject_unknown(j, "", {"dataset", "task", "outputs", "attribute", "methods", "augmentation", "seeds", "model",
                           "training", "domain_order", "validation_fraction", "output"});
    ExperimentConfig cfg;
    const auto task = get_string(j, "", "task", "expression");
    rethrow_as("task", [&] { cfg.task.kind = parse_task(task); });
    if (task != "expression" && task != "au" && task != "action_units") fail("task", "expected expression or au");

    const json* ds = find(j, "dataset");
    if (!ds || !ds->is_object()) fail("dataset", "required object with 'synth' or 'manifest'");
    const bool has_synth = find(*ds, "synth") != nullptr;
    const bool has_manifest = find(*ds, "manifest") != nullptr;
    if (has_synth == has_manifest) fail("dataset", "give exactly one of 'synth' or 'manifest'");
    if (has_synth) {
        reject_unknown(*ds, "dataset", {"synth"});
        parse_synth((*ds)["synth"], cfg);
        cfg.task = cfg.synth.task;
        if (find(j, "outputs")) fail("outputs", "set dataset.synth.classes instead for synthetic data");
        // desk-scale defaults matched to the generator
        if (cfg.synth.mode == SynthMode::vector) {
            cfg.model.backbone = BackboneKind::mlp;
            cfg.model.hidden = {64, 64};
            cfg.model.dense_dropout = 0.0;
        } else {
            cfg.model.backbone = BackboneKind::baseline_cnn;
        }
    } else {
        parse_manifest(*ds, base, cfg);
        cfg.task.outputs = get_count(j, "", "outputs", cfg.task.kind == TaskKind::expression ? 7 : 12);
        if (cfg.task.outputs < 1 || (cfg.task.kind == TaskKind::expression && cfg.task.outputs < 2)) {
            fail("outputs", "too few outputs for the task");
        }
        cfg.model.backbone = BackboneKind::baseline_cnn;
        cfg.manifest_options.task = cfg.task;
    }
    cfg.model.task = cfg.task;

    cfg.attribute = get_string(j, "", "attribute", cfg.attribute);
    if (cfg.attribute.empty() || cfg.attribute.find_first_of(",\"\n/") != std::string::npos) {
        fail("attribute", "must be non-empty without ',', '/', quotes or newlines");
    }

    const json* methods = find(j, "methods");
    if (!methods || !methods->is_array() || methods->empty()) fail("methods", "need at least one method");
    std::set<Method> seen;
    for (std::size_t i = 0; i < methods->size(); ++i) {
        auto ms = parse_method_entry((*methods)[i], "methods[" + std::to_string(i) + "]");
        if (!seen.insert(ms.method).second) fail("methods[" + std::to_string(i) + "]", "duplicate method");
        cfg.methods.push_back(std::move(ms));
    }

    const auto aug = get_string(j, "", "augmentation", "off");
    if (aug == "off") cfg.augmentation = AugMode::off;
    else if (aug == "on") cfg.augmentation = AugMode::on;
    else if (aug == "both") cfg.augmentation = AugMode::both;
    else fail("augmentation", "expected on, off or both");

    if (const json* s = find(j, "seeds")) {
        if (!s->is_array() || s->empty()) fail("seeds", "expected a non-empty array of integers");
        cfg.seeds.clear();
        std::set<std::uint64_t> distinct;
        for (std::size_t i = 0; i < s->size(); ++i) {
            if (!is_count((*s)[i])) fail("seeds[" + std::to_string(i) + "]", "expected a non-negative integer");
            const auto v = (*s)[i].get<std::uint64_t>();
            if (!distinct.insert(v).second) fail("seeds[" + std::to_string(i) + "]", "duplicate seed");
            cfg.seeds.push_back(v);
        }
    }
    if (const json* m = find(j, "model")) parse_model(*m, cfg);
    if (const json* t = find(j, "training")) parse_training(*t, cfg);
    if (const json* o = find(j, "domain_order")) {
        if (!o->is_array()) fail("domain_order", "expected an array of domain names");
        for (std::size_t i = 0; i < o->size(); ++i) {
            if (!(*o)[i].is_string()) fail("domain_order[" + std::to_string(i) + "]", "expected a string");
            cfg.domain_order.push_back((*o)[i].get<std::string>());
        }
    }
    cfg.validation_fraction = get_number(j, "", "validation_fraction", cfg.validation_fraction);
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
        fail("validation_fraction", "must be in (0, 1)");
    }
    const auto out = get_string(j, "", "output", cfg.output.string());
    if (out.empty()) fail("output", "must not be empty");
    cfg.output = std::filesystem::path(out).is_absolute() || base.empty() ? std::filesystem::path(out) : base / out;
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

json cell_identity(const ExperimentConfig& cfg, const MethodSettings& method, bool augment, std::uint64_t seed) {
    json id;
    id["schema"] = 1;
    if (cfg.manifest) {
        const auto& mo = cfg.manifest_options;
        id["dataset"] = {{"manifest", std::filesystem::absolute(*cfg.manifest).lexically_normal().string()},
                         {"channels", mo.channels},
                         {"height", mo.height},
                         {"width", mo.width},
                         {"test_fraction", mo.test_fraction},
                         {"split_seed", mo.split_seed}};
    } else {
        const auto& s = cfg.synth;
        id["dataset"] = {{"mode", s.mode == SynthMode::vector ? "vector" : "image"},
                         {"classes", s.task.outputs},
                         {"domains", s.domains},
                         {"dim", s.dim},
                         {"image_size", s.image_size},
                         {"samples", s.samples},
                         {"ratios", s.ratios},
                         {"shift", s.shift},
                         {"offset_scale", s.offset_scale},
                         {"noise", s.noise},
                         {"separation", s.separation},
                         {"test_fraction", s.test_fraction},
                         {"seed", s.seed}};
    }
    id["task"] = std::string(task_name(cfg.task.kind));
    id["outputs"] = cfg.task.outputs;
    id["attribute"] = cfg.attribute;
    const auto& h = method.hyper;
    id["method"] = {{"name", std::string(method_name(method.method))},
                    {"lambda", h.lambda},
                    {"gamma", h.gamma},
                    {"xi", h.xi},
                    {"c", h.c},
                    {"buffer_capacity", h.buffer_capacity},
                    {"fisher_sample_cap", h.fisher_sample_cap},
                    {"sweep", method.sweep}};
    const auto& m = cfg.model;
    id["model"] = {{"backbone", m.backbone == BackboneKind::mlp ? "mlp" : "baseline_cnn"},
                   {"hidden", m.hidden},
                   {"channel_plan", m.channel_plan},
                   {"conv_dropout", m.conv_dropout},
                   {"dense_dropout", m.dense_dropout},
                   {"bn_momentum", m.bn_momentum}};
    const auto& t = cfg.training;
    id["training"] = {{"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"optimizer", t.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
                      {"learning_rate", t.optimizer.learning_rate},
                      {"precision", t.precision == Precision::wide ? "wide" : "narrow"},
                      {"ddc_rule", t.ddc_rule == DdcReduction::sum ? "sum" : "max"},
                      {"augment",
                       {{"flip_prob", t.augment.flip_prob},
                        {"max_rotation_deg", t.augment.max_rotation_deg},
                        {"pixel_noise", t.augment.pixel_noise},
                        {"vector_jitter", t.augment.vector_jitter}}}};
    id["domain_order"] = cfg.domain_order;
    id["validation_fraction"] = cfg.validation_fraction;
    id["augment"] = augment;
    id["seed"] = seed;
    return id;
}

std::string config_hash(const json& identity) {
    // nlohmann::json objects are key-sorted, so dump() is canonical
    const std::string text = identity.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace faircl
