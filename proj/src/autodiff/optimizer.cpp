#include "faircl/autodiff/optimizer.hpp"

#include <cmath>
#include <ios>

#include "faircl/error.hpp"

namespace faircl {

OptimizerState::OptimizerState(OptimizerConfig config, Precision precision)
    : config_(config), precision_(precision) {
    if (!(config_.learning_rate > 0.0)) throw ValidationError("optimizer: learning rate must be positive");
}

void OptimizerState::step(ParameterSet& params) {
    for (const auto& e : params) {
        if (!e.tensor.has_grad()) throw ContractError("optimizer_step: no gradient for '" + e.name + "'");
    }
    if (config_.kind == OptimizerKind::adam && m_.empty()) {
        m_ = params.zeros_like();
        v_ = params.zeros_like();
    }
    if (config_.kind == OptimizerKind::adam && m_.size() != params.size()) {
        throw ContractError("optimizer_step: moment layout does not match the parameter set");
    }
    ++steps_;
    const double lr = config_.learning_rate;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    std::size_t idx = 0;
    for (auto& e : params) {
        auto theta = e.tensor.values();
        auto grad = e.tensor.grad();
        if (config_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = round_to(precision_, theta[i] - lr * grad[i]);
        } else {
            auto& m = m_[idx];
            auto& v = v_[idx];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                theta[i] = round_to(precision_, theta[i] - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
            }
        }
        e.tensor.zero_grad();
        ++idx;
    }
}

void dump_checksums(std::ostream& os, std::uint64_t step, const ParameterSet& params) {
    for (const auto& e : params) {
        os << step << ',' << e.name << ',' << std::hex << ParameterSet::checksum(e.tensor) << std::dec << '\n';
    }
}

}  // namespace faircl
