#include "faircl/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "faircl/csv.hpp"
#include "faircl/data/image_io.hpp"
#include "faircl/error.hpp"

namespace faircl {

namespace {

std::string row_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    return path.filename().string() + ":" + std::to_string(line) + ": " + what;
}

Label parse_label(std::string_view text, const TaskSpec& task) {
    if (task.kind == TaskKind::expression) {
        std::size_t value = 0;
        const auto* end = text.data() + text.size();
        auto [p, ec] = std::from_chars(text.data(), end, value);
        if (text.empty() || ec != std::errc{} || p != end) {
            throw ValidationError("bad expression label '" + std::string(text) + "'");
        }
        if (value >= task.outputs) {
            throw ValidationError("label " + std::to_string(value) + " outside [0, " + std::to_string(task.outputs) + ")");
        }
        return value;
    }
    if (text.size() != task.outputs) {
        throw ValidationError("AU label '" + std::string(text) + "' must have " + std::to_string(task.outputs) +
                              " characters");
    }
    std::vector<std::uint8_t> units(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '0' && text[i] != '1') throw ValidationError("AU label '" + std::string(text) + "' is not binary");
        units[i] = text[i] == '1' ? 1 : 0;
    }
    return units;
}

std::vector<double> parse_features(std::string_view text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto next = std::min(text.find(';', pos), text.size());
        const auto field = text.substr(pos, next - pos);
        double v = 0.0;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (field.empty() || ec != std::errc{} || p != field.data() + field.size()) {
            throw ValidationError("bad feature value '" + std::string(field) + "'");
        }
        out.push_back(v);
        pos = next + 1;
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string stratum_key(const Sample& s) { return s.domain + '\x1f' + encode_label(s.label); }

std::vector<char> stratified_mask(const std::vector<const Sample*>& samples, double test_fraction,
                                  std::uint64_t seed, std::vector<std::string>& warnings);

}  // namespace

std::string encode_label(const Label& label) {
    if (is_class_label(label)) return std::to_string(class_of(label));
    std::string out;
    for (auto u : units_of(label)) out.push_back(u ? '1' : '0');
    return out;
}

std::vector<Sample> load_manifest(const std::filesystem::path& path, const ManifestOptions& options,
                                  std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest '" + path.string() + "'");
    const auto table = csv::read(in);
    const auto c_path = table.column("path");
    const auto c_feat = table.column("features");
    const auto c_label = table.column("label");
    const auto c_domain = table.column("domain");
    const auto c_split = table.column("split");
    constexpr auto npos = static_cast<std::size_t>(-1);
    if (c_path == npos && c_feat == npos) throw ValidationError(row_error(path, 1, "missing column 'path' or 'features'"));
    for (auto [idx, name] : {std::pair{c_label, "label"}, {c_domain, "domain"}, {c_split, "split"}}) {
        if (idx == npos) throw ValidationError(row_error(path, 1, std::string("missing column '") + name + "'"));
    }
    const auto base = path.parent_path();
    std::vector<Sample> samples;
    samples.reserve(table.rows.size());
    bool needs_split = false;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        try {
            Sample s;
            s.label = parse_label(row[c_label], options.task);
            s.domain = row[c_domain];
            if (s.domain.empty()) throw ValidationError("empty domain");
            const auto& split = row[c_split];
            if (split == "train") s.split = Split::train;
            else if (split == "test") s.split = Split::test;
            else if (split.empty()) needs_split = true;
            else throw ValidationError("bad split '" + split + "'");
            if (c_path != npos && !row[c_path].empty()) {
                s.source = row[c_path];
                const auto img = read_image(base / s.source);
                s.features = image_to_chw(img, options.channels, options.height, options.width);
                s.shape = {options.channels, options.height, options.width};
            } else if (c_feat != npos) {
                s.features = parse_features(row[c_feat]);
                s.shape = {s.features.size()};
            } else {
                throw ValidationError("row has neither path nor features");
            }
            samples.push_back(std::move(s));
        } catch (const ValidationError& e) {
            throw ValidationError(row_error(path, line, e.what()));
        }
    }
    if (!samples.empty() && samples.front().shape.size() == 1) {
        for (std::size_t r = 0; r < samples.size(); ++r) {
            if (samples[r].shape != samples.front().shape) {
                throw ValidationError(row_error(path, table.line_numbers[r], "feature length differs from first row"));
            }
        }
    }
    if (needs_split) {
        std::vector<Sample*> pending;
        for (auto& s : samples) {
            if (s.split == Split::unassigned) pending.push_back(&s);
        }
        std::vector<std::string> notes;
        const auto mask = stratified_mask({pending.begin(), pending.end()}, options.test_fraction,
                                          options.split_seed, notes);
        for (std::size_t k = 0; k < pending.size(); ++k) pending[k]->split = mask[k] ? Split::test : Split::train;
        if (warnings) warnings->insert(warnings->end(), notes.begin(), notes.end());
    }
    return samples;
}

void write_manifest(const std::filesystem::path& dir, const std::vector<Sample>& samples, const TaskSpec& task,
                    const std::string& manifest_name) {
    std::filesystem::create_directories(dir);
    const bool images = !samples.empty() && samples.front().shape.size() == 3;
    if (images) std::filesystem::create_directories(dir / "img");
    std::ofstream out(dir / manifest_name);
    if (!out) throw ValidationError("cannot write manifest in '" + dir.string() + "'");
    out << (images ? "path" : "features") << ",label,domain,split\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        validate_sample(s, task);
        std::string first;
        if (images) {
            if (s.shape.size() != 3) throw ValidationError("write_manifest: mixed image and vector samples");
            Image img;
            img.channels = s.shape[0];
            img.height = s.shape[1];
            img.width = s.shape[2];
            img.pixels.resize(s.features.size());
            for (std::size_t c = 0; c < img.channels; ++c) {
                for (std::size_t p = 0; p < img.height * img.width; ++p) {
                    const double v = std::clamp(s.features[c * img.height * img.width + p], 0.0, 1.0);
                    img.pixels[p * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
                }
            }
            char name[32];
            std::snprintf(name, sizeof name, "img/%06zu.png", i);
            write_png(dir / name, img);
            first = name;
        } else {
            for (std::size_t k = 0; k < s.features.size(); ++k) {
                if (k) first += ';';
                first += format_double(s.features[k]);
            }
        }
        out << first << ',' << encode_label(s.label) << ',' << csv::escape(s.domain) << ',' << split_name(s.split)
            << '\n';
    }
}

namespace {

// 1 marks a held-out sample; input order is untouched.
std::vector<char> stratified_mask(const std::vector<const Sample*>& samples, double test_fraction,
                                  std::uint64_t seed, std::vector<std::string>& warnings) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must be in (0, 1)");
    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < samples.size(); ++i) strata[stratum_key(*samples[i])].push_back(i);
    std::vector<char> is_test(samples.size(), 0);
    Rng rng(seed);
    for (auto& [key, members] : strata) {
        if (members.size() < 2) {
            const auto& s = *samples[members.front()];
            warnings.push_back("stratum (domain " + s.domain + ", label " + encode_label(s.label) +
                               ") has fewer than 2 samples; kept in train");
            continue;
        }
        std::shuffle(members.begin(), members.end(), rng);
        auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
        n_test = std::min(n_test, members.size() - 1);
        for (std::size_t k = 0; k < n_test; ++k) is_test[members[k]] = 1;
    }
    return is_test;
}

}  // namespace

SplitResult stratified_split(const std::vector<Sample>& samples, double test_fraction, std::uint64_t seed) {
    std::vector<const Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    SplitResult result;
    const auto is_test = stratified_mask(ptrs, test_fraction, seed, result.warnings);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Sample s = samples[i];
        s.split = is_test[i] ? Split::test : Split::train;
        (is_test[i] ? result.test : result.train).push_back(std::move(s));
    }
    return result;
}

std::vector<Episode> split_episodes(const std::vector<Sample>& samples, const OrderPolicy& policy) {
    auto domains = domains_of(samples);
    if (domains.size() < 2) throw ValidationError("need at least two domains for an incremental stream");
    std::map<std::string, Episode> by_domain;
    for (const auto& d : domains) by_domain[d].domain = d;
    for (const auto& s : samples) {
        auto& ep = by_domain[s.domain];
        if (s.split == Split::train) ep.train.push_back(s);
        else if (s.split == Split::test) ep.test.push_back(s);
        else throw ValidationError("sample without split in domain '" + s.domain + "'");
    }
    std::vector<std::string> order;
    if (!policy.explicit_order.empty()) {
        order = policy.explicit_order;
        auto sorted_given = order;
        auto sorted_found = domains;
        std::sort(sorted_given.begin(), sorted_given.end());
        std::sort(sorted_found.begin(), sorted_found.end());
        if (sorted_given != sorted_found) throw ValidationError("explicit domain order must list every domain once");
    } else {
        order = domains;
        std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
            const auto na = by_domain[a].train.size(), nb = by_domain[b].train.size();
            return na != nb ? na > nb : a < b;
        });
    }
    std::vector<Episode> episodes;
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto ep = std::move(by_domain[order[i]]);
        ep.position = i;
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (domains < 2) throw ValidationError("synth: need at least 2 domains");
    if (task.kind == TaskKind::expression && task.outputs < 2) throw ValidationError("synth: need at least 2 classes");
    if (task.outputs < 1) throw ValidationError("synth: need at least 1 output");
    if (ratios.size() != domains) throw ValidationError("synth: one ratio per domain required");
    double total = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw ValidationError("synth: ratios must be positive");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("synth: ratios must sum to 1");
    if (mode == SynthMode::vector && dim < 2) throw ValidationError("synth: dim must be at least 2");
    if (mode == SynthMode::image && image_size < 16) throw ValidationError("synth: image_size must be at least 16");
    if (samples < domains) throw ValidationError("synth: too few samples");
    if (shift < 0.0 || noise < 0.0 || offset_scale < 0.0 || separation <= 0.0) {
        throw ValidationError("synth: shift, noise and offset_scale must be non-negative, separation positive");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("synth: test_fraction must be in (0, 1)");
}

std::vector<std::size_t> SynthConfig::domain_counts() const {
    std::vector<std::size_t> counts(domains);
    std::size_t assigned = 0;
    for (std::size_t d = 0; d + 1 < domains; ++d) {
        counts[d] = static_cast<std::size_t>(std::llround(ratios[d] * static_cast<double>(samples)));
        assigned += counts[d];
    }
    counts.back() = samples - std::min(assigned, samples);
    return counts;
}

std::string SynthConfig::domain_name(std::size_t d) const { return "d" + std::to_string(d + 1); }

namespace {

using Matrix = std::vector<double>;  // row-major dim x dim

Matrix random_rotation(std::size_t dim, double angle, Rng& rng) {
    Matrix r(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) r[i * dim + i] = 1.0;
    if (angle == 0.0) return r;
    std::vector<std::size_t> perm(dim);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t k = 0; k + 1 < dim; k += 2) {
        const auto i = perm[k], j = perm[k + 1];
        r[i * dim + i] = c;
        r[i * dim + j] = -s;
        r[j * dim + i] = s;
        r[j * dim + j] = c;
    }
    return r;
}

std::vector<Label> make_labels(const SynthConfig& cfg, std::size_t count, Rng& rng) {
    std::vector<Label> labels;
    labels.reserve(count);
    if (cfg.task.kind == TaskKind::expression) {
        for (std::size_t i = 0; i < count; ++i) labels.emplace_back(i % cfg.task.outputs);
    } else {
        std::bernoulli_distribution active(0.3);
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<std::uint8_t> u(cfg.task.outputs);
            for (auto& b : u) b = active(rng) ? 1 : 0;
            labels.emplace_back(std::move(u));
        }
    }
    return labels;
}

// Bases (prototypes or patterns) that a label activates.
std::vector<std::size_t> active_bases(const Label& label) {
    if (is_class_label(label)) return {class_of(label)};
    std::vector<std::size_t> out;
    const auto& u = units_of(label);
    for (std::size_t a = 0; a < u.size(); ++a) {
        if (u[a]) out.push_back(a);
    }
    return out;
}

double quantize(double v) { return static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0; }

}  // namespace

std::vector<Sample> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const auto counts = cfg.domain_counts();
    const std::size_t bases = cfg.task.outputs;
    std::vector<Sample> out;
    out.reserve(cfg.samples);

    if (cfg.mode == SynthMode::vector) {
        const std::size_t D = cfg.dim;
        std::vector<std::vector<double>> mu(bases, std::vector<double>(D));
        for (auto& m : mu) {
            for (auto& v : m) v = normal(rng, 0.0, cfg.separation);
        }
        for (std::size_t d = 0; d < cfg.domains; ++d) {
            const auto rot = random_rotation(D, cfg.shift, rng);
            std::vector<double> offset(D);
            double norm = 0.0;
            for (auto& v : offset) {
                v = normal(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (auto& v : offset) v *= cfg.shift * cfg.offset_scale / norm;
            const auto labels = make_labels(cfg, counts[d], rng);
            for (const auto& label : labels) {
                std::vector<double> proto(D, 0.0);
                for (auto b : active_bases(label)) {
                    for (std::size_t k = 0; k < D; ++k) proto[k] += mu[b][k];
                }
                Sample s;
                s.features.resize(D);
                for (std::size_t i = 0; i < D; ++i) {
                    double acc = offset[i];
                    for (std::size_t k = 0; k < D; ++k) acc += rot[i * D + k] * proto[k];
                    s.features[i] = acc + normal(rng, 0.0, cfg.noise);
                }
                s.shape = {D};
                s.label = label;
                s.domain = cfg.domain_name(d);
                out.push_back(std::move(s));
            }
        }
    } else {
        const std::size_t S = cfg.image_size;
        const std::size_t P = S / 2;  // pattern edge
        std::vector<std::vector<double>> pattern(bases, std::vector<double>(P * P));
        for (auto& p : pattern) {
            for (auto& v : p) v = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : 0.0;
        }
        const double max_shift = static_cast<double>(S - P) / 2.0;
        for (std::size_t d = 0; d < cfg.domains; ++d) {
            const double frac = static_cast<double>(d) / static_cast<double>(cfg.domains - 1);
            // domain d moves the pattern diagonally and dims it
            const double move = std::min(max_shift, std::round(cfg.shift * cfg.offset_scale * frac));
            const auto top = static_cast<std::size_t>(max_shift - move);
            const auto left = static_cast<std::size_t>(max_shift + move);
            const double intensity = std::clamp(0.8 - 0.4 * std::min(cfg.shift, 1.0) * frac, 0.2, 1.0);
            const double background = 0.1 + 0.2 * std::min(cfg.shift, 1.0) * frac;
            const auto labels = make_labels(cfg, counts[d], rng);
            for (const auto& label : labels) {
                std::vector<double> canvas(S * S, background);
                for (auto b : active_bases(label)) {
                    for (std::size_t y = 0; y < P; ++y) {
                        for (std::size_t x = 0; x < P; ++x) {
                            canvas[(top + y) * S + left + x] += intensity * pattern[b][y * P + x];
                        }
                    }
                }
                for (auto& v : canvas) v = quantize(v + normal(rng, 0.0, cfg.noise));
                Sample s;
                s.features = std::move(canvas);
                s.shape = {1, S, S};
                s.label = label;
                s.domain = cfg.domain_name(d);
                out.push_back(std::move(s));
            }
        }
    }
    std::vector<const Sample*> ptrs;
    for (const auto& s : out) ptrs.push_back(&s);
    std::vector<std::string> notes;
    const auto mask = stratified_mask(ptrs, cfg.test_fraction, mix_seed(cfg.seed, 0x5917), notes);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].split = mask[i] ? Split::test : Split::train;
    return out;
}

void export_synthetic(const std::filesystem::path& dir, const SynthConfig& cfg, const std::vector<Sample>& samples) {
    write_manifest(dir, samples, cfg.task);
    nlohmann::ordered_json j;
    j["format"] = "faircl-synth/1";
    j["mode"] = cfg.mode == SynthMode::vector ? "vector" : "image";
    j["task"] = std::string(task_name(cfg.task.kind));
    j["outputs"] = cfg.task.outputs;
    j["domains"] = cfg.domains;
    j["dim"] = cfg.dim;
    j["image_size"] = cfg.image_size;
    j["samples"] = cfg.samples;
    j["ratios"] = cfg.ratios;
    j["shift"] = cfg.shift;
    j["offset_scale"] = cfg.offset_scale;
    j["noise"] = cfg.noise;
    j["separation"] = cfg.separation;
    j["test_fraction"] = cfg.test_fraction;
    j["seed"] = cfg.seed;
    std::ofstream out(dir / "synth.json");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

void flip_horizontal(Sample& s) {
    if (s.shape.size() != 3) throw ShapeError("flip_horizontal: image sample required");
    const auto C = s.shape[0], H = s.shape[1], W = s.shape[2];
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            auto* row = s.features.data() + (c * H + y) * W;
            std::reverse(row, row + W);
        }
    }
}

void rotate_image(Sample& s, double degrees) {
    if (s.shape.size() != 3) throw ShapeError("rotate_image: image sample required");
    const auto C = s.shape[0], H = s.shape[1], W = s.shape[2];
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(H) - 1) / 2.0, cx = (static_cast<double>(W) - 1) / 2.0;
    std::vector<double> out(s.features.size(), 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const auto* src = s.features.data() + c * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                // inverse mapping with bilinear sampling, zero outside
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                const double sy = cs * dy + sn * dx + cy;
                const double sx = -sn * dy + cs * dx + cx;
                const double fy = std::floor(sy), fx = std::floor(sx);
                const double ty = sy - fy, tx = sx - fx;
                double v = 0.0;
                for (int oy = 0; oy < 2; ++oy) {
                    for (int ox = 0; ox < 2; ++ox) {
                        const double yy = fy + oy, xx = fx + ox;
                        if (yy < 0 || xx < 0 || yy >= static_cast<double>(H) || xx >= static_cast<double>(W)) continue;
                        const double w = (oy ? ty : 1 - ty) * (ox ? tx : 1 - tx);
                        v += w * src[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
                    }
                }
                out[(c * H + y) * W + x] = v;
            }
        }
    }
    s.features = std::move(out);
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
    Sample out = s;
    if (!cfg.enabled) return out;
    if (s.shape.size() == 3) {
        if (uniform(rng, 0.0, 1.0) < cfg.flip_prob) flip_horizontal(out);
        const double deg = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg);
        rotate_image(out, deg);
        for (auto& v : out.features) v = std::clamp(v + normal(rng, 0.0, cfg.pixel_noise), 0.0, 1.0);
    } else {
        for (auto& v : out.features) v += normal(rng, 0.0, cfg.vector_jitter);
    }
    return out;
}

}  // namespace faircl
