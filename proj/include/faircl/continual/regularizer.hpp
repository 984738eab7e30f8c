#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "faircl/autodiff/graph.hpp"
#include "faircl/autodiff/tensor.hpp"
#include "faircl/data/sample.hpp"
#include "faircl/models/model.hpp"

namespace faircl {

enum class RegMethod { none, ewc, ewc_online, si, mas, naive_rehearsal };

[[nodiscard]] std::string_view reg_method_name(RegMethod m) noexcept;

struct MethodConfig {
    double lambda = 100.0;  // EWC, EWC-Online, MAS
    double gamma = 1.0;     // online Fisher decay, (0, 1]
    double xi = 0.1;        // SI damping
    double c = 1.0;         // SI strength
    std::size_t buffer_capacity = 500;
    std::size_t fisher_sample_cap = 1024;

    /// Raises ValidationError for out-of-range fields.
    void validate() const;

    /// Defaults with MAS using lambda = 1.
    [[nodiscard]] static MethodConfig defaults_for(RegMethod m);
};

struct Anchor {
    std::size_t episode = 0;
    ParamArrays theta;
    ParamArrays importance;  // F or Omega; empty for ewc_online (see running_fisher)
};

/// Everything a regularization method carries between episodes.
///
/// ewc keeps one anchor per consolidated episode. ewc_online keeps one
/// anchor and one running Fisher. si and mas keep one anchor whose
/// importance accumulates over episodes.
struct RegularizerState {
    RegMethod method = RegMethod::none;
    MethodConfig hyper{};
    std::vector<Anchor> anchors;
    ParamArrays running_fisher;
    ParamArrays si_omega;  // path integral of the current episode
    ParamArrays si_start;  // parameters at episode start

    /// Multiplier in front of sum Omega (theta - theta*)^2: lambda / 2, or c for si.
    [[nodiscard]] double strength() const noexcept;
};

[[nodiscard]] RegularizerState make_regularizer(RegMethod method, const MethodConfig& hyper);

/// Diagonal empirical Fisher: mean over the first min(cap, n) samples of
/// the squared gradient of log p(y | x). Evaluated in eval mode. Raises
/// ContractError on empty data.
[[nodiscard]] ParamArrays empirical_fisher(Model& model, std::span<const Sample> data, std::size_t cap,
                                           Precision precision = Precision::wide);

/// Mean over inputs of |d ||logits||^2 / d theta|. Labels are not read.
[[nodiscard]] ParamArrays output_sensitivity(Model& model, std::span<const Sample> inputs, std::size_t cap,
                                             Precision precision = Precision::wide);

/// Appends (theta*, F) for `episode`.
void consolidate_ewc(RegularizerState& state, Model& model, std::span<const Sample> data, std::size_t episode,
                     Precision precision = Precision::wide);

/// running <- gamma * running + F_new; the single anchor becomes `theta`.
void update_ewc_online(RegularizerState& state, const ParamArrays& fisher_new, const ParamArrays& theta,
                       std::size_t episode);

/// omega -= g * delta, element-wise.
void si_accumulate_step(RegularizerState& state, const ParamArrays& task_grad, const ParamArrays& delta);

/// Starts an SI episode: omega = 0, theta_start = params.
void si_begin_episode(RegularizerState& state, const ParameterSet& params);

/// Omega += omega / ((theta - theta_start)^2 + xi); resets omega and
/// theta_start; anchor = current params.
void si_consolidate(RegularizerState& state, const ParameterSet& params, std::size_t episode);

/// Omega += output sensitivity; anchor = current params.
void consolidate_mas(RegularizerState& state, Model& model, std::span<const Sample> inputs, std::size_t episode,
                     Precision precision = Precision::wide);

/// Differentiable quadratic penalty over every anchor, bound to `params`
/// inside `g`. Zero (a constant) when there are no anchors. Raises
/// ContractError when the state layout disagrees with params.
Var penalty_quadratic(Graph& g, const RegularizerState& state, ParameterSet& params);

/// Value-only form of penalty_quadratic.
[[nodiscard]] double penalty_value(const RegularizerState& state, const ParameterSet& params);

/// Text snapshot: a version line, the method and hyperparameters, then
/// every array as `name shape... : values`. Doubles use shortest
/// round-trip notation.
void save_regularizer(std::ostream& os, const RegularizerState& state, const ParameterSet& layout);
/// Raises ValidationError on a malformed or unsupported snapshot.
[[nodiscard]] RegularizerState load_regularizer(std::istream& is, const ParameterSet& layout);

}  // namespace faircl
