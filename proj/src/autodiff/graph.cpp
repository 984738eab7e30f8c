#include "faircl/autodiff/graph.hpp"

#include <algorithm>

#include "faircl/error.hpp"

namespace faircl {

std::span<const double> BackwardContext::out_grad() const { return graph_.nodes_[node_].grad; }

const Tensor& BackwardContext::output() const { return graph_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t i) const {
    return graph_.nodes_[graph_.nodes_[node_].inputs.at(i).id].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
    return graph_.nodes_[graph_.nodes_[node_].inputs.at(i).id].requires_grad;
}

std::span<double> BackwardContext::input_grad(std::size_t i) {
    auto& in = graph_.nodes_[graph_.nodes_[node_].inputs.at(i).id];
    if (!in.requires_grad) return {};
    if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
    return in.grad;
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
    Node n;
    n.op = "parameter";
    n.value = Tensor(param.shape(), std::vector<double>(param.values().begin(), param.values().end()));
    n.requires_grad = true;
    n.bound = &param;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (consumed_) throw ContractError("graph: recording on a consumed graph");
    if (precision_ == Precision::narrow) {
        for (auto& v : value.values()) v = round_to(precision_, v);
    }
    if (!value.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value in output of shape " +
                           shape_str(value.shape()));
    }
    Node n;
    n.op = std::string(op);
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](Var v) { return nodes_.at(v.id).requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

std::span<const double> Graph::grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (!n.requires_grad || n.grad.empty()) {
        throw ContractError("graph: no gradient recorded for node '" + n.op + "'");
    }
    return n.grad;
}

void Graph::backward(Var loss) {
    if (consumed_) throw ContractError("graph: backward called twice");
    auto& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
    }
    consumed_ = true;
    if (!root.requires_grad) {
        for (auto& n : nodes_) {
            if (n.bound && !n.bound->has_grad()) n.bound->zero_grad();
        }
        return;
    }
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) {
            BackwardContext ctx(*this, i);
            n.backward(ctx);
        }
    }
    for (auto& n : nodes_) {
        if (!n.bound) continue;
        if (!n.bound->has_grad()) n.bound->zero_grad();
        if (n.grad.empty()) continue;
        auto g = n.bound->grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
}

}  // namespace faircl
