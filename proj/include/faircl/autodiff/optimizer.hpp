#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>

#include "faircl/autodiff/tensor.hpp"

namespace faircl {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Optimizer hyperparameters plus Adam moments mirroring a ParameterSet.
class OptimizerState {
public:
    explicit OptimizerState(OptimizerConfig config = {}, Precision precision = Precision::wide);

    [[nodiscard]] const OptimizerConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::uint64_t step_count() const noexcept { return steps_; }
    [[nodiscard]] const ParamArrays& first_moment() const noexcept { return m_; }
    [[nodiscard]] const ParamArrays& second_moment() const noexcept { return v_; }

    /// Applies one update from the populated gradients, then zeroes them.
    /// Raises ContractError if any entry lacks a gradient.
    void step(ParameterSet& params);

private:
    OptimizerConfig config_;
    Precision precision_;
    std::uint64_t steps_ = 0;
    ParamArrays m_;
    ParamArrays v_;
};

/// Free-function form of OptimizerState::step.
inline void optimizer_step(ParameterSet& params, OptimizerState& state) { state.step(params); }

/// Writes "step,param_name,checksum" lines, one per entry.
void dump_checksums(std::ostream& os, std::uint64_t step, const ParameterSet& params);

}  // namespace faircl
