#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "faircl/autodiff/graph.hpp"
#include "faircl/rng.hpp"

namespace faircl::ops {

struct Conv2dAttrs {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct Pool2dAttrs {
    std::size_t kernel = 2;
    std::size_t stride = 2;
};

/// Running statistics owned by the model, one entry per channel/feature.
struct BatchNormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static BatchNormStats fresh(std::size_t channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }
};

struct BatchNormAttrs {
    bool training = false;
    double momentum = 0.1;
    double eps = 1e-5;
    BatchNormStats* stats = nullptr;  // required; updated in training mode
};

struct DropoutAttrs {
    double rate = 0.0;
    bool training = false;
    Rng* rng = nullptr;  // required when training and rate > 0
};

// Primitives. Shape mismatches raise ShapeError naming the op and dims.

/// [n,k] x [k,m] -> [n,m]
Var matmul(Graph& g, Var a, Var b);
/// Adds bias[C] along axis 1 of a rank-2 [N,C] or rank-4 [N,C,H,W] tensor.
Var add_bias(Graph& g, Var x, Var bias);
/// x [N,C,H,W], kernel [O,C,KH,KW] -> [N,O,OH,OW]
Var conv2d(Graph& g, Var x, Var kernel, Conv2dAttrs attrs);
Var maxpool2d(Graph& g, Var x, Pool2dAttrs attrs);
Var relu(Graph& g, Var x);
/// Per-feature (rank 2) or per-channel (rank 4) normalisation.
Var batchnorm(Graph& g, Var x, Var gamma, Var beta, const BatchNormAttrs& attrs);
/// Inverted dropout. Eval mode (or rate 0) returns x unchanged.
Var dropout(Graph& g, Var x, const DropoutAttrs& attrs);
/// [N, ...] -> [N, prod(...)]
Var flatten(Graph& g, Var x);
Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var sum(Graph& g, Var x);
Var scale(Graph& g, Var x, double factor);
/// Selects rows (first-axis slices) of x in the given order.
Var gather_rows(Graph& g, Var x, std::span<const std::size_t> rows);

// Losses.

/// Mean over the batch of w_i * -log softmax(logits_i)[target_i]; weights
/// default to 1. Targets outside [0, M) raise IndexError.
Var softmax_cross_entropy(Graph& g, Var logits, std::span<const std::size_t> targets,
                          std::span<const double> weights = {});

/// Mean over batch x units of binary cross-entropy on logits, in the
/// log-sum-exp form. Targets must be 0/1 (ValidationError otherwise). Optional
/// per-sample weights scale each row.
Var sigmoid_bce(Graph& g, Var logits, const Tensor& targets, std::span<const double> weights = {});

// Generic dispatch over the primitive set.

enum class Primitive {
    matmul,
    add_bias,
    conv2d,
    maxpool2d,
    relu,
    batchnorm,
    dropout,
    flatten,
    add,
    mul,
    sum,
    scale,
    gather_rows,
};

[[nodiscard]] std::string_view primitive_name(Primitive p);

struct OpAttrs {
    Conv2dAttrs conv{};
    Pool2dAttrs pool{};
    BatchNormAttrs batchnorm{};
    DropoutAttrs dropout{};
    double factor = 1.0;
    std::vector<std::size_t> rows;
};

Var apply_primitive(Graph& g, Primitive op, std::span<const Var> inputs, const OpAttrs& attrs = {});

// Plain (non-recorded) helpers used at inference time.

[[nodiscard]] double sigmoid(double z);
/// Row-wise softmax of a [B,M] tensor.
[[nodiscard]] Tensor softmax_rows(const Tensor& logits);

}  // namespace faircl::ops
