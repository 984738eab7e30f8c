#include "faircl/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "faircl/error.hpp"

namespace faircl {

ParamArrays finite_difference_gradient(const std::function<double(ParameterSet&)>& f, ParameterSet& params,
                                       double h) {
    if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
    ParamArrays out = params.zeros_like();
    std::size_t idx = 0;
    for (auto& e : params) {
        auto v = e.tensor.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + h;
            const double up = f(params);
            v[i] = saved - h;
            const double down = f(params);
            v[i] = saved;
            out[idx][i] = (up - down) / (2.0 * h);
        }
        ++idx;
    }
    return out;
}

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_relative_error(const ParamArrays& a, const ParamArrays& b, double floor) {
    if (a.size() != b.size()) throw ShapeError("max_relative_error: array counts differ");
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].size() != b[k].size()) throw ShapeError("max_relative_error: array sizes differ");
        for (std::size_t i = 0; i < a[k].size(); ++i) worst = std::max(worst, relative_error(a[k][i], b[k][i], floor));
    }
    return worst;
}

}  // namespace faircl
