#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "faircl/autodiff/tensor.hpp"

namespace faircl {

/// Handle to a node recorded on a Graph.
struct Var {
    std::size_t id = 0;
};

class Graph;

/// View handed to an operation's backward function.
class BackwardContext {
public:
    BackwardContext(Graph& graph, std::size_t node) : graph_(graph), node_(node) {}

    [[nodiscard]] std::span<const double> out_grad() const;
    [[nodiscard]] const Tensor& output() const;
    [[nodiscard]] const Tensor& input(std::size_t i) const;
    [[nodiscard]] bool needs_grad(std::size_t i) const;
    /// Gradient accumulator of input i; empty when the input needs none.
    [[nodiscard]] std::span<double> input_grad(std::size_t i);

private:
    Graph& graph_;
    std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid reverse topological order.
///
/// A graph belongs to one worker; it is built per step and discarded.
class Graph {
public:
    explicit Graph(Precision precision = Precision::wide) : precision_(precision) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    [[nodiscard]] Precision precision() const noexcept { return precision_; }

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the node (read with grad()).
    Var input(Tensor value);
    /// Leaf bound to a trainable tensor; backward() accumulates into its grad.
    Var parameter(Tensor& param);

    /// Appends an op output. Values are rounded to the graph precision and
    /// checked for NaN/Inf.
    Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    [[nodiscard]] const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    [[nodiscard]] const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
    [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    [[nodiscard]] std::span<const double> grad(Var v) const;
    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Reverse pass from a scalar. Bound parameters get their gradients
    /// accumulated (allocated as zeros first if absent); callers zero the
    /// ParameterSet beforehand so unreachable entries read zero. The graph
    /// is consumed: a second call raises ContractError.
    void backward(Var loss);

private:
    friend class BackwardContext;

    struct Node {
        std::string op;
        Tensor value;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Tensor* bound = nullptr;
        std::vector<double> grad;
    };

    Precision precision_;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace faircl
