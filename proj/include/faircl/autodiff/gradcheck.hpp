#pragma once

#include <functional>

#include "faircl/autodiff/tensor.hpp"

namespace faircl {

/// Central-difference estimate (f(θ+h) - f(θ-h)) / 2h of every coordinate of
/// every entry. Parameters are perturbed in place and restored.
[[nodiscard]] ParamArrays finite_difference_gradient(const std::function<double(ParameterSet&)>& f,
                                                     ParameterSet& params, double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// turning round-off into large ratios.
[[nodiscard]] double relative_error(double a, double b, double floor = 1e-4);

/// Largest relative_error over aligned arrays.
[[nodiscard]] double max_relative_error(const ParamArrays& a, const ParamArrays& b, double floor = 1e-4);

}  // namespace faircl
