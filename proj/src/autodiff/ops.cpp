#include "faircl/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "faircl/error.hpp"

namespace faircl::ops {

namespace {

[[noreturn]] void shape_fail(std::string_view op, const std::string& what) {
    throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank, const char* operand) {
    if (t.rank() != rank) {
        shape_fail(op, std::string(operand) + " must have rank " + std::to_string(rank) + ", got " +
                           shape_str(t.shape()));
    }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[i * k + p] += acc;
        }
    }
}

struct ConvGeometry {
    std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;

    [[nodiscard]] std::size_t col_rows() const { return c * kh * kw; }
    [[nodiscard]] std::size_t col_cols() const { return oh * ow; }
};

void im2col(const ConvGeometry& gm, const double* img, double* col) {
    for (std::size_t ci = 0; ci < gm.c; ++ci) {
        for (std::size_t ki = 0; ki < gm.kh; ++ki) {
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                const std::size_t row = (ci * gm.kh + ki) * gm.kw + kj;
                double* dst = col + row * gm.col_cols();
                for (std::size_t y = 0; y < gm.oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * gm.stride + ki) -
                                    static_cast<std::ptrdiff_t>(gm.pad);
                    for (std::size_t x = 0; x < gm.ow; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * gm.stride + kj) -
                                        static_cast<std::ptrdiff_t>(gm.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(gm.h) &&
                                            ix < static_cast<std::ptrdiff_t>(gm.w);
                        dst[y * gm.ow + x] =
                            inside ? img[(ci * gm.h + static_cast<std::size_t>(iy)) * gm.w +
                                         static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& gm, const double* col, double* img) {
    for (std::size_t ci = 0; ci < gm.c; ++ci) {
        for (std::size_t ki = 0; ki < gm.kh; ++ki) {
            for (std::size_t kj = 0; kj < gm.kw; ++kj) {
                const std::size_t row = (ci * gm.kh + ki) * gm.kw + kj;
                const double* src = col + row * gm.col_cols();
                for (std::size_t y = 0; y < gm.oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * gm.stride + ki) -
                                    static_cast<std::ptrdiff_t>(gm.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(gm.h)) continue;
                    for (std::size_t x = 0; x < gm.ow; ++x) {
                        const auto ix = static_cast<std::ptrdiff_t>(x * gm.stride + kj) -
                                        static_cast<std::ptrdiff_t>(gm.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(gm.w)) continue;
                        img[(ci * gm.h + static_cast<std::size_t>(iy)) * gm.w + static_cast<std::size_t>(ix)] +=
                            src[y * gm.ow + x];
                    }
                }
            }
        }
    }
}

// Splits a rank-2 or rank-4 tensor into (outer, channels, inner) around axis 1.
struct ChannelLayout {
    std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(std::string_view op, const Tensor& x) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    shape_fail(op, "input must have rank 2 or 4, got " + shape_str(x.shape()));
}

double log1p_exp_neg_abs(double z) { return std::log1p(std::exp(-std::abs(z))); }

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require_rank("matmul", av, 2, "lhs");
    require_rank("matmul", bv, 2, "rhs");
    if (av.dim(1) != bv.dim(0)) {
        shape_fail("matmul", "inner dims differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor out(Shape{n, m});
    gemm_nn(n, k, m, av.values().data(), bv.values().data(), out.values().data());
    return g.record("matmul", std::move(out), {a, b}, [n, k, m](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        if (ctx.needs_grad(0)) {
            gemm_nt(n, m, k, dout.data(), ctx.input(1).values().data(), ctx.input_grad(0).data());
        }
        if (ctx.needs_grad(1)) {
            gemm_tn(n, k, m, ctx.input(0).values().data(), dout.data(), ctx.input_grad(1).data());
        }
    });
}

Var add_bias(Graph& g, Var x, Var bias) {
    const auto& xv = g.value(x);
    const auto& bv = g.value(bias);
    const auto lay = channel_layout("add_bias", xv);
    if (bv.rank() != 1 || bv.dim(0) != lay.channels) {
        shape_fail("add_bias", "bias " + shape_str(bv.shape()) + " does not match axis 1 of " +
                                   shape_str(xv.shape()));
    }
    Tensor out = xv;
    out.set_requires_grad(false);
    out.clear_grad();
    auto o = out.values();
    for (std::size_t n = 0; n < lay.outer; ++n)
        for (std::size_t c = 0; c < lay.channels; ++c)
            for (std::size_t i = 0; i < lay.inner; ++i) o[(n * lay.channels + c) * lay.inner + i] += bv[c];
    return g.record("add_bias", std::move(out), {x, bias}, [lay](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        if (ctx.needs_grad(0)) {
            auto dx = ctx.input_grad(0);
            for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i];
        }
        if (ctx.needs_grad(1)) {
            auto db = ctx.input_grad(1);
            for (std::size_t n = 0; n < lay.outer; ++n)
                for (std::size_t c = 0; c < lay.channels; ++c)
                    for (std::size_t i = 0; i < lay.inner; ++i)
                        db[c] += dout[(n * lay.channels + c) * lay.inner + i];
        }
    });
}

Var conv2d(Graph& g, Var x, Var kernel, Conv2dAttrs attrs) {
    const auto& xv = g.value(x);
    const auto& kv = g.value(kernel);
    require_rank("conv2d", xv, 4, "input");
    require_rank("conv2d", kv, 4, "kernel");
    if (attrs.stride == 0) shape_fail("conv2d", "stride must be positive");
    if (kv.dim(1) != xv.dim(1)) {
        shape_fail("conv2d", "kernel " + shape_str(kv.shape()) + " expects " + std::to_string(kv.dim(1)) +
                                 " input channels, input " + shape_str(xv.shape()) + " has " +
                                 std::to_string(xv.dim(1)));
    }
    const std::size_t ph = xv.dim(2) + 2 * attrs.padding;
    const std::size_t pw = xv.dim(3) + 2 * attrs.padding;
    if (kv.dim(2) > ph || kv.dim(3) > pw) {
        shape_fail("conv2d", "kernel " + shape_str(kv.shape()) + " larger than padded input " +
                                 shape_str(xv.shape()));
    }
    ConvGeometry gm{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), kv.dim(3),
                    (ph - kv.dim(2)) / attrs.stride + 1, (pw - kv.dim(3)) / attrs.stride + 1,
                    attrs.stride, attrs.padding};

    Tensor out(Shape{gm.n, gm.o, gm.oh, gm.ow});
    std::vector<double> col(gm.col_rows() * gm.col_cols());
    const std::size_t in_stride = gm.c * gm.h * gm.w;
    const std::size_t out_stride = gm.o * gm.oh * gm.ow;
    for (std::size_t s = 0; s < gm.n; ++s) {
        im2col(gm, xv.values().data() + s * in_stride, col.data());
        gemm_nn(gm.o, gm.col_rows(), gm.col_cols(), kv.values().data(), col.data(),
                out.values().data() + s * out_stride);
    }
    return g.record("conv2d", std::move(out), {x, kernel}, [gm, in_stride, out_stride](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        const auto& xin = ctx.input(0);
        const auto& k = ctx.input(1);
        std::vector<double> col(gm.col_rows() * gm.col_cols());
        std::vector<double> dcol(col.size());
        const bool want_x = ctx.needs_grad(0);
        const bool want_k = ctx.needs_grad(1);
        auto dx = ctx.input_grad(0);
        auto dk = ctx.input_grad(1);
        for (std::size_t s = 0; s < gm.n; ++s) {
            const double* ds = dout.data() + s * out_stride;
            if (want_k) {
                im2col(gm, xin.values().data() + s * in_stride, col.data());
                gemm_nt(gm.o, gm.col_cols(), gm.col_rows(), ds, col.data(), dk.data());
            }
            if (want_x) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                gemm_tn(gm.o, gm.col_rows(), gm.col_cols(), k.values().data(), ds, dcol.data());
                col2im(gm, dcol.data(), dx.data() + s * in_stride);
            }
        }
    });
}

Var maxpool2d(Graph& g, Var x, Pool2dAttrs attrs) {
    const auto& xv = g.value(x);
    require_rank("maxpool2d", xv, 4, "input");
    if (attrs.kernel == 0 || attrs.stride == 0) shape_fail("maxpool2d", "kernel and stride must be positive");
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h < attrs.kernel || w < attrs.kernel) {
        shape_fail("maxpool2d", "input " + shape_str(xv.shape()) + " smaller than kernel " +
                                    std::to_string(attrs.kernel));
    }
    const std::size_t oh = (h - attrs.kernel) / attrs.stride + 1;
    const std::size_t ow = (w - attrs.kernel) / attrs.stride + 1;
    Tensor out(Shape{n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    auto in = xv.values();
    auto o = out.values();
    std::size_t idx = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx, ++idx) {
                std::size_t best = base + (y * attrs.stride) * w + xx * attrs.stride;
                for (std::size_t ky = 0; ky < attrs.kernel; ++ky) {
                    for (std::size_t kx = 0; kx < attrs.kernel; ++kx) {
                        const std::size_t pos = base + (y * attrs.stride + ky) * w + xx * attrs.stride + kx;
                        if (in[pos] > in[best]) best = pos;
                    }
                }
                o[idx] = in[best];
                (*argmax)[idx] = best;
            }
        }
    }
    return g.record("maxpool2d", std::move(out), {x}, [argmax](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto dx = ctx.input_grad(0);
        for (std::size_t i = 0; i < dout.size(); ++i) dx[(*argmax)[i]] += dout[i];
    });
}

Var relu(Graph& g, Var x) {
    const auto& xv = g.value(x);
    Tensor out(xv.shape());
    auto in = xv.values();
    auto o = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    return g.record("relu", std::move(out), {x}, [](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto in = ctx.input(0).values();
        auto dx = ctx.input_grad(0);
        for (std::size_t i = 0; i < dout.size(); ++i) {
            if (in[i] > 0.0) dx[i] += dout[i];
        }
    });
}

Var batchnorm(Graph& g, Var x, Var gamma, Var beta, const BatchNormAttrs& attrs) {
    const auto& xv = g.value(x);
    const auto lay = channel_layout("batchnorm", xv);
    const auto& gv = g.value(gamma);
    const auto& bv = g.value(beta);
    if (gv.rank() != 1 || gv.dim(0) != lay.channels || bv.rank() != 1 || bv.dim(0) != lay.channels) {
        shape_fail("batchnorm", "gamma " + shape_str(gv.shape()) + " / beta " + shape_str(bv.shape()) +
                                    " do not match " + std::to_string(lay.channels) + " channels of " +
                                    shape_str(xv.shape()));
    }
    if (!attrs.stats) throw ContractError("batchnorm: running statistics not provided");
    auto& stats = *attrs.stats;
    if (stats.running_mean.size() != lay.channels || stats.running_var.size() != lay.channels) {
        shape_fail("batchnorm", "running statistics sized for " + std::to_string(stats.running_mean.size()) +
                                    " channels, input has " + std::to_string(lay.channels));
    }

    const std::size_t count = lay.outer * lay.inner;
    auto in = xv.values();
    std::vector<double> mean(lay.channels), inv_std(lay.channels);
    if (attrs.training) {
        for (std::size_t c = 0; c < lay.channels; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < lay.outer; ++n)
                for (std::size_t i = 0; i < lay.inner; ++i) s += in[(n * lay.channels + c) * lay.inner + i];
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t n = 0; n < lay.outer; ++n)
                for (std::size_t i = 0; i < lay.inner; ++i) {
                    const double d = in[(n * lay.channels + c) * lay.inner + i] - mu;
                    ss += d * d;
                }
            const double var = ss / static_cast<double>(count);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + attrs.eps);
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            stats.running_mean[c] = (1.0 - attrs.momentum) * stats.running_mean[c] + attrs.momentum * mu;
            stats.running_var[c] = (1.0 - attrs.momentum) * stats.running_var[c] + attrs.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < lay.channels; ++c) {
            mean[c] = stats.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + attrs.eps);
        }
    }

    Tensor out(xv.shape());
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto o = out.values();
    for (std::size_t n = 0; n < lay.outer; ++n)
        for (std::size_t c = 0; c < lay.channels; ++c)
            for (std::size_t i = 0; i < lay.inner; ++i) {
                const std::size_t k = (n * lay.channels + c) * lay.inner + i;
                (*xhat)[k] = (in[k] - mean[c]) * inv_std[c];
                o[k] = gv[c] * (*xhat)[k] + bv[c];
            }

    const bool training = attrs.training;
    return g.record("batchnorm", std::move(out), {x, gamma, beta},
                    [lay, count, training, xhat, inv_std](BackwardContext& ctx) {
                        auto dout = ctx.out_grad();
                        auto gam = ctx.input(1).values();
                        std::vector<double> sum_dy(lay.channels, 0.0), sum_dy_xhat(lay.channels, 0.0);
                        for (std::size_t n = 0; n < lay.outer; ++n)
                            for (std::size_t c = 0; c < lay.channels; ++c)
                                for (std::size_t i = 0; i < lay.inner; ++i) {
                                    const std::size_t k = (n * lay.channels + c) * lay.inner + i;
                                    sum_dy[c] += dout[k];
                                    sum_dy_xhat[c] += dout[k] * (*xhat)[k];
                                }
                        if (ctx.needs_grad(1)) {
                            auto dg = ctx.input_grad(1);
                            for (std::size_t c = 0; c < lay.channels; ++c) dg[c] += sum_dy_xhat[c];
                        }
                        if (ctx.needs_grad(2)) {
                            auto db = ctx.input_grad(2);
                            for (std::size_t c = 0; c < lay.channels; ++c) db[c] += sum_dy[c];
                        }
                        if (!ctx.needs_grad(0)) return;
                        auto dx = ctx.input_grad(0);
                        const double m = static_cast<double>(count);
                        for (std::size_t n = 0; n < lay.outer; ++n)
                            for (std::size_t c = 0; c < lay.channels; ++c)
                                for (std::size_t i = 0; i < lay.inner; ++i) {
                                    const std::size_t k = (n * lay.channels + c) * lay.inner + i;
                                    if (training) {
                                        dx[k] += gam[c] * inv_std[c] / m *
                                                 (m * dout[k] - sum_dy[c] - (*xhat)[k] * sum_dy_xhat[c]);
                                    } else {
                                        dx[k] += gam[c] * inv_std[c] * dout[k];
                                    }
                                }
                    });
}

Var dropout(Graph& g, Var x, const DropoutAttrs& attrs) {
    if (attrs.rate < 0.0 || attrs.rate >= 1.0) {
        throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(attrs.rate));
    }
    if (!attrs.training || attrs.rate == 0.0) return x;
    if (!attrs.rng) throw ContractError("dropout: training mode requires an rng");
    const auto& xv = g.value(x);
    const double keep = 1.0 - attrs.rate;
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    std::bernoulli_distribution bern(keep);
    for (auto& m : *mask) m = bern(*attrs.rng) ? 1.0 / keep : 0.0;
    Tensor out(xv.shape());
    auto in = xv.values();
    auto o = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * (*mask)[i];
    return g.record("dropout", std::move(out), {x}, [mask](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto dx = ctx.input_grad(0);
        for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i] * (*mask)[i];
    });
}

Var flatten(Graph& g, Var x) {
    const auto& xv = g.value(x);
    if (xv.rank() < 1) shape_fail("flatten", "input must have a batch axis");
    Tensor out(Shape{xv.dim(0), xv.size() / xv.dim(0)},
               std::vector<double>(xv.values().begin(), xv.values().end()));
    return g.record("flatten", std::move(out), {x}, [](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto dx = ctx.input_grad(0);
        for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i];
    });
}

Var add(Graph& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (av.shape() != bv.shape()) {
        shape_fail("add", "operand shapes differ: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor out(av.shape());
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    return g.record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!ctx.needs_grad(k)) continue;
            auto d = ctx.input_grad(k);
            for (std::size_t i = 0; i < dout.size(); ++i) d[i] += dout[i];
        }
    });
}

Var mul(Graph& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (av.shape() != bv.shape()) {
        shape_fail("mul", "operand shapes differ: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor out(av.shape());
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    return g.record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        if (ctx.needs_grad(0)) {
            auto d = ctx.input_grad(0);
            auto other = ctx.input(1).values();
            for (std::size_t i = 0; i < dout.size(); ++i) d[i] += dout[i] * other[i];
        }
        if (ctx.needs_grad(1)) {
            auto d = ctx.input_grad(1);
            auto other = ctx.input(0).values();
            for (std::size_t i = 0; i < dout.size(); ++i) d[i] += dout[i] * other[i];
        }
    });
}

Var sum(Graph& g, Var x) {
    const auto& xv = g.value(x);
    double s = 0.0;
    for (double v : xv.values()) s += v;
    return g.record("sum", Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
        const double d = ctx.out_grad()[0];
        for (auto& v : ctx.input_grad(0)) v += d;
    });
}

Var scale(Graph& g, Var x, double factor) {
    const auto& xv = g.value(x);
    Tensor out(xv.shape());
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
    return g.record("scale", std::move(out), {x}, [factor](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto dx = ctx.input_grad(0);
        for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i] * factor;
    });
}

Var gather_rows(Graph& g, Var x, std::span<const std::size_t> rows) {
    const auto& xv = g.value(x);
    if (xv.rank() < 1) shape_fail("gather_rows", "input must have a leading axis");
    if (rows.empty()) shape_fail("gather_rows", "empty row selection");
    const std::size_t stride = xv.size() / xv.dim(0);
    Shape shape = xv.shape();
    shape[0] = rows.size();
    Tensor out(shape);
    auto o = out.values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= xv.dim(0)) {
            throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                             shape_str(xv.shape()));
        }
        std::copy_n(xv.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                    o.begin() + static_cast<std::ptrdiff_t>(r * stride));
    }
    std::vector<std::size_t> sel(rows.begin(), rows.end());
    return g.record("gather_rows", std::move(out), {x}, [sel = std::move(sel), stride](BackwardContext& ctx) {
        auto dout = ctx.out_grad();
        auto dx = ctx.input_grad(0);
        for (std::size_t r = 0; r < sel.size(); ++r)
            for (std::size_t j = 0; j < stride; ++j) dx[sel[r] * stride + j] += dout[r * stride + j];
    });
}

Var softmax_cross_entropy(Graph& g, Var logits, std::span<const std::size_t> targets,
                          std::span<const double> weights) {
    const auto& lv = g.value(logits);
    require_rank("softmax_cross_entropy", lv, 2, "logits");
    const std::size_t b = lv.dim(0), m = lv.dim(1);
    if (targets.size() != b) {
        shape_fail("softmax_cross_entropy", std::to_string(targets.size()) + " targets for batch of " +
                                                std::to_string(b));
    }
    if (!weights.empty() && weights.size() != b) {
        shape_fail("softmax_cross_entropy", std::to_string(weights.size()) + " weights for batch of " +
                                                std::to_string(b));
    }
    auto probs = std::make_shared<std::vector<double>>(b * m);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (targets[i] >= m) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                             " out of range [0, " + std::to_string(m) + ")");
        }
        const double* row = lv.values().data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < m; ++j) (*probs)[i * m + j] = std::exp(row[j] - lse);
        const double w = weights.empty() ? 1.0 : weights[i];
        total += w * (lse - row[targets[i]]);
    }
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    std::vector<double> wts(weights.begin(), weights.end());
    return g.record("softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(b)), {logits},
                    [probs, tgt = std::move(tgt), wts = std::move(wts), b, m](BackwardContext& ctx) {
                        const double d = ctx.out_grad()[0] / static_cast<double>(b);
                        auto dx = ctx.input_grad(0);
                        for (std::size_t i = 0; i < b; ++i) {
                            const double w = wts.empty() ? 1.0 : wts[i];
                            for (std::size_t j = 0; j < m; ++j) {
                                const double onehot = j == tgt[i] ? 1.0 : 0.0;
                                dx[i * m + j] += d * w * ((*probs)[i * m + j] - onehot);
                            }
                        }
                    });
}

Var sigmoid_bce(Graph& g, Var logits, const Tensor& targets, std::span<const double> weights) {
    const auto& lv = g.value(logits);
    require_rank("sigmoid_bce", lv, 2, "logits");
    if (targets.shape() != lv.shape()) {
        shape_fail("sigmoid_bce", "targets " + shape_str(targets.shape()) + " vs logits " +
                                      shape_str(lv.shape()));
    }
    const std::size_t b = lv.dim(0), a = lv.dim(1);
    if (!weights.empty() && weights.size() != b) {
        shape_fail("sigmoid_bce", std::to_string(weights.size()) + " weights for batch of " + std::to_string(b));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        for (std::size_t j = 0; j < a; ++j) {
            const double t = targets[i * a + j];
            if (t != 0.0 && t != 1.0) {
                throw ValidationError("sigmoid_bce: non-binary target " + std::to_string(t) + " at (" +
                                      std::to_string(i) + ", " + std::to_string(j) + ")");
            }
            const double z = lv[i * a + j];
            total += w * (std::max(z, 0.0) - z * t + log1p_exp_neg_abs(z));
        }
    }
    const double denom = static_cast<double>(b * a);
    std::vector<double> tgt(targets.values().begin(), targets.values().end());
    std::vector<double> wts(weights.begin(), weights.end());
    return g.record("sigmoid_bce", Tensor::scalar(total / denom), {logits},
                    [tgt = std::move(tgt), wts = std::move(wts), a, denom](BackwardContext& ctx) {
                        const double d = ctx.out_grad()[0] / denom;
                        auto z = ctx.input(0).values();
                        auto dx = ctx.input_grad(0);
                        for (std::size_t k = 0; k < dx.size(); ++k) {
                            const double w = wts.empty() ? 1.0 : wts[k / a];
                            dx[k] += d * w * (sigmoid(z[k]) - tgt[k]);
                        }
                    });
}

std::string_view primitive_name(Primitive p) {
    switch (p) {
        case Primitive::matmul: return "matmul";
        case Primitive::add_bias: return "add_bias";
        case Primitive::conv2d: return "conv2d";
        case Primitive::maxpool2d: return "maxpool2d";
        case Primitive::relu: return "relu";
        case Primitive::batchnorm: return "batchnorm";
        case Primitive::dropout: return "dropout";
        case Primitive::flatten: return "flatten";
        case Primitive::add: return "add";
        case Primitive::mul: return "mul";
        case Primitive::sum: return "sum";
        case Primitive::scale: return "scale";
        case Primitive::gather_rows: return "gather_rows";
    }
    return "unknown";
}

Var apply_primitive(Graph& g, Primitive op, std::span<const Var> inputs, const OpAttrs& attrs) {
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw ContractError(std::string(primitive_name(op)) + ": expects " + std::to_string(n) +
                                " inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (op) {
        case Primitive::matmul: arity(2); return matmul(g, inputs[0], inputs[1]);
        case Primitive::add_bias: arity(2); return add_bias(g, inputs[0], inputs[1]);
        case Primitive::conv2d: arity(2); return conv2d(g, inputs[0], inputs[1], attrs.conv);
        case Primitive::maxpool2d: arity(1); return maxpool2d(g, inputs[0], attrs.pool);
        case Primitive::relu: arity(1); return relu(g, inputs[0]);
        case Primitive::batchnorm: arity(3); return batchnorm(g, inputs[0], inputs[1], inputs[2], attrs.batchnorm);
        case Primitive::dropout: arity(1); return dropout(g, inputs[0], attrs.dropout);
        case Primitive::flatten: arity(1); return flatten(g, inputs[0]);
        case Primitive::add: arity(2); return add(g, inputs[0], inputs[1]);
        case Primitive::mul: arity(2); return mul(g, inputs[0], inputs[1]);
        case Primitive::sum: arity(1); return sum(g, inputs[0]);
        case Primitive::scale: arity(1); return scale(g, inputs[0], attrs.factor);
        case Primitive::gather_rows: arity(1); return gather_rows(g, inputs[0], attrs.rows);
    }
    throw ContractError("apply_primitive: unknown primitive");
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) shape_fail("softmax", "logits must have rank 2, got " + shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), m = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = logits.values().data() + i * m;
        const double mx = *std::max_element(row, row + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = std::exp(row[j] - mx) / z;
    }
    return out;
}

}  // namespace faircl::ops
