#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "faircl/autodiff/gradcheck.hpp"
#include "faircl/autodiff/ops.hpp"
#include "faircl/autodiff/optimizer.hpp"
#include "faircl/error.hpp"
#include "faircl/models/model.hpp"
#include "support.hpp"

using namespace faircl;
using faircl::test::random_tensor;

namespace {

// Direct nested-loop convolution.
Tensor conv_oracle(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    Tensor out({n, o, oh, ow});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const auto y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const auto z = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (y < 0 || z < 0 || y >= static_cast<long>(h) || z >= static_cast<long>(w)) continue;
                                acc += x[((b * c + ic) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(z)] *
                                       k[((oc * c + ic) * kh + u) * kw + v];
                            }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
    return out;
}

double ce_value(const Tensor& logits, std::vector<std::size_t> targets) {
    Graph g;
    return g.value(ops::softmax_cross_entropy(g, g.constant(logits), targets)).item();
}

double bce_value(const Tensor& logits, const Tensor& targets) {
    Graph g;
    return g.value(ops::sigmoid_bce(g, g.constant(logits), targets)).item();
}

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("shape and value length must agree") {
        CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
        Tensor t({2, 3}, 1.5);
        CHECK(t.size() == 6);
        CHECK_FALSE(t.has_grad());
        t.zero_grad();
        CHECK(t.grad().size() == t.size());
    }

    TEST_CASE("parameter set keeps order and rejects duplicate names") {
        ParameterSet ps;
        ps.add("w", Tensor({2, 2}, 1.0));
        ps.add("b", Tensor({3}, 2.0));
        CHECK_THROWS_AS(ps.add("w", Tensor({1})), ValidationError);
        CHECK(ps.entry(0).name == "w");
        CHECK(ps.entry(1).name == "b");
        CHECK(ps.flatten().size() == ps.total_count());
        CHECK(ps.total_count() == 7);
        auto flat = ps.flatten();
        flat[4] = -1.0;
        ps.assign_flat(flat);
        CHECK(ps.at("b")[0] == -1.0);
    }

    TEST_CASE("non-finite values are rejected at op boundaries") {
        Graph g;
        const Var a = g.input(Tensor({1}, 1e200));
        CHECK_THROWS_AS(ops::mul(g, a, a), NumericError);
    }

    TEST_CASE("shape mismatch names the op") {
        Graph g;
        const Var a = g.input(Tensor({2, 3}));
        const Var b = g.input(Tensor({2, 3}));
        try {
            (void)ops::matmul(g, a, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        }
    }

    TEST_CASE("narrow precision rounds produced values to float") {
        Graph g(Precision::narrow);
        const Var a = g.input(Tensor({1}, 0.1));
        const Var out = ops::scale(g, a, 3.0);
        CHECK(g.value(out)[0] == static_cast<double>(static_cast<float>(0.1 * 3.0)));
    }
}

TEST_SUITE("primitives") {
    TEST_CASE("identity 1x1 kernel leaves the input unchanged") {
        Rng rng(1);
        Graph g;
        const Tensor x = random_tensor(rng, {1, 1, 3, 3});
        const Var out = ops::conv2d(g, g.input(x), g.input(Tensor({1, 1, 1, 1}, 1.0)), {});
        CHECK(g.value(out).shape() == x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(g.value(out)[i] == x[i]);
    }

    TEST_CASE("ones kernel over ones sums to 9") {
        Graph g;
        const Tensor x({1, 1, 4, 4}, 1.0), k({1, 1, 3, 3}, 1.0);
        const auto& out = g.value(ops::conv2d(g, g.input(x), g.input(k), {}));
        const auto expect = conv_oracle(x, k, 1, 0);
        REQUIRE(out.shape() == Shape{1, 1, 2, 2});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(out[i] == 9.0);
            CHECK(expect[i] == 9.0);
        }
    }

    TEST_CASE("conv2d forward matches the nested-loop oracle") {
        Rng rng(2);
        for (int t = 0; t < 20; ++t) {
            const std::size_t stride = 1 + t % 2, pad = t % 3 == 0 ? 1 : 0;
            const Tensor x = random_tensor(rng, {2, 2, 5, 6});
            const Tensor k = random_tensor(rng, {3, 2, 3, 2});
            Graph g;
            const auto& out = g.value(ops::conv2d(g, g.input(x), g.input(k), {stride, pad}));
            const auto expect = conv_oracle(x, k, stride, pad);
            REQUIRE(out.shape() == expect.shape());
            for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }

    TEST_CASE("relu") {
        Graph g;
        const auto& out = g.value(ops::relu(g, g.input(Tensor({3}, {-1.0, 0.0, 2.0}))));
        CHECK(out[0] == 0.0);
        CHECK(out[1] == 0.0);
        CHECK(out[2] == 2.0);
    }

    TEST_CASE("dropout in eval mode is the identity") {
        Rng rng(3);
        const Tensor x = random_tensor(rng, {4, 5});
        Graph g;
        const auto& out = g.value(ops::dropout(g, g.input(x), {0.5, false, nullptr}));
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
    }

    TEST_CASE("batchnorm in eval mode is deterministic and leaves statistics alone") {
        Rng rng(4);
        const Tensor x = random_tensor(rng, {3, 2, 2, 2});
        auto stats = ops::BatchNormStats::fresh(2);
        stats.running_mean = {0.3, -0.2};
        stats.running_var = {1.5, 0.7};
        const auto before = stats.running_mean;
        std::vector<double> first;
        for (int rep = 0; rep < 2; ++rep) {
            Graph g;
            ops::BatchNormAttrs attrs;
            attrs.stats = &stats;
            const auto& out = g.value(ops::batchnorm(g, g.input(x), g.input(Tensor({2}, 1.0)), g.input(Tensor({2}, 0.0)), attrs));
            std::vector<double> vals(out.values().begin(), out.values().end());
            if (rep == 0) first = vals;
            else CHECK(vals == first);
        }
        CHECK(stats.running_mean == before);
        // (x - mean) / sqrt(var + eps) for channel 0, first element.
        CHECK(first[0] == doctest::Approx((x[0] - 0.3) / std::sqrt(1.5 + 1e-5)).epsilon(1e-12));
    }

    TEST_CASE("softmax rows sum to one") {
        Rng rng(5);
        for (int t = 0; t < 50; ++t) {
            const auto p = ops::softmax_rows(random_tensor(rng, {3, 7}, -20.0, 20.0));
            for (std::size_t i = 0; i < 3; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < 7; ++j) s += p[i * 7 + j];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_SUITE("losses") {
    TEST_CASE("uniform logits give ln M") {
        for (std::size_t target = 0; target < 7; ++target) {
            CHECK(ce_value(Tensor({1, 7}, 0.25), {target}) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
        }
    }

    TEST_CASE("saturated correct class costs nothing") {
        CHECK(ce_value(Tensor({1, 2}, {10.0, -10.0}), {0}) < 1e-4);
    }

    TEST_CASE("cross-entropy matches direct evaluation") {
        const double expect = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
        CHECK(ce_value(Tensor({1, 3}, {1.0, 2.0, 3.0}), {2}) == doctest::Approx(expect).epsilon(1e-12));
    }

    TEST_CASE("bce at logit 0 is ln 2") {
        CHECK(bce_value(Tensor({1, 1}, 0.0), Tensor({1, 1}, 1.0)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    TEST_CASE("saturated bce costs nothing") {
        CHECK(bce_value(Tensor({1, 2}, {20.0, -20.0}), Tensor({1, 2}, {1.0, 0.0})) < 1e-6);
    }

    TEST_CASE("bce matches the elementwise mean") {
        Rng rng(6);
        const Tensor z = random_tensor(rng, {2, 3}, -3.0, 3.0);
        const Tensor t({2, 3}, {1, 0, 0, 1, 1, 0});
        double acc = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-z[i]));
            acc += -(t[i] * std::log(s) + (1.0 - t[i]) * std::log(1.0 - s));
        }
        CHECK(bce_value(z, t) == doctest::Approx(acc / 6.0).epsilon(1e-12));
    }

    TEST_CASE("losses are non-negative and finite for large logits") {
        Rng rng(7);
        for (int t = 0; t < 50; ++t) {
            const Tensor z = random_tensor(rng, {4, 5}, -1e3, 1e3);
            Tensor bits({4, 5});
            for (auto& v : bits.values()) v = static_cast<double>(uniform_index(rng, 2));
            const double ce = ce_value(z, {0, 1, 2, 4});
            const double bce = bce_value(z, bits);
            CHECK(std::isfinite(ce));
            CHECK(std::isfinite(bce));
            CHECK(ce >= 0.0);
            CHECK(bce >= 0.0);
        }
    }

    TEST_CASE("bad targets are rejected") {
        Graph g;
        const Var z = g.input(Tensor({1, 3}));
        std::vector<std::size_t> out_of_range{3};
        CHECK_THROWS_AS(ops::softmax_cross_entropy(g, z, out_of_range), IndexError);
        CHECK_THROWS_AS(ops::sigmoid_bce(g, z, Tensor({1, 3}, 0.5)), ValidationError);
    }
}

TEST_SUITE("backward") {
    TEST_CASE("theta squared at 3 has gradient 6") {
        ParameterSet ps;
        auto& theta = ps.add("theta", Tensor({1}, 3.0));
        ps.zero_grad();
        Graph g;
        const Var v = g.parameter(theta);
        g.backward(ops::sum(g, ops::mul(g, v, v)));
        CHECK(theta.grad()[0] == 6.0);
    }

    TEST_CASE("a loss that ignores theta leaves its gradient at zero") {
        ParameterSet ps;
        auto& theta = ps.add("theta", Tensor({2}, 3.0));
        ps.zero_grad();
        Graph g;
        (void)g.parameter(theta);
        const Var other = g.input(Tensor({2}, 1.0));
        g.backward(ops::sum(g, ops::mul(g, other, other)));
        CHECK(theta.grad()[0] == 0.0);
        CHECK(theta.grad()[1] == 0.0);
    }

    TEST_CASE("a graph is consumed by backward") {
        Graph g;
        const Var x = g.input(Tensor({1}, 2.0));
        const Var loss = ops::sum(g, x);
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), ContractError);
    }
}

TEST_SUITE("gradient suite") {
    TEST_CASE("every primitive and loss passes central differences on 20 random shapes") {
        for (const auto& op : test::gradient_ops()) {
            const auto errors = test::gradient_trials(op, 20, 1000 + op.size());
            REQUIRE(errors.size() == 20);
            for (double e : errors) {
                INFO(op << " relative error " << e);
                CHECK(e < 1e-5);
            }
        }
    }

    TEST_CASE("finite differences of theta squared") {
        ParameterSet ps;
        ps.add("theta", Tensor({1}, 3.0));
        const auto g = finite_difference_gradient(
            [](ParameterSet& p) { return p.at("theta")[0] * p.at("theta")[0]; }, ps, 1e-4);
        CHECK(std::abs(g[0][0] - 6.0) < 1e-6);
        CHECK(ps.at("theta")[0] == 3.0);
    }

    TEST_CASE("finite differences of a constant") {
        ParameterSet ps;
        ps.add("theta", Tensor({3}, 1.0));
        const auto g = finite_difference_gradient([](ParameterSet&) { return 4.0; }, ps);
        for (double v : g[0]) CHECK(v == 0.0);
    }

    TEST_CASE("two-layer MLP cross-entropy agrees in both directions") {
        ModelSpec spec;
        spec.dim = 5;
        spec.hidden = {6};
        spec.dense_dropout = 0.0;
        spec.task = {TaskKind::expression, 4};
        Model model = build_mlp(spec, 11);
        Rng rng(12);
        const Tensor x = random_tensor(rng, {6, 5});
        const std::vector<std::size_t> y{0, 1, 2, 3, 1, 2};
        auto loss = [&](Graph& g) { return ops::softmax_cross_entropy(g, model.forward(g, g.input(x), {}), y); };
        model.params().zero_grad();
        {
            Graph g;
            g.backward(loss(g));
        }
        const auto analytic = model.params().grads();
        const auto numeric = finite_difference_gradient(
            [&](ParameterSet&) {
                Graph g;
                return g.value(loss(g)).item();
            },
            model.params());
        CHECK(max_relative_error(analytic, numeric) < 1e-5);
        CHECK(max_relative_error(numeric, analytic) < 1e-5);
    }

    TEST_CASE("full baseline CNN loss matches finite differences") {
        ModelSpec spec;
        spec.input = InputKind::image;
        spec.backbone = BackboneKind::baseline_cnn;
        spec.channels = 1;
        spec.height = 16;
        spec.width = 16;
        spec.channel_plan = {2, 2, 2, 2};
        spec.hidden = {4, 3};
        spec.task = {TaskKind::expression, 3};
        Model model = build_baseline_cnn(spec, 21);
        Rng rng(22);
        const Tensor x = random_tensor(rng, {3, 1, 16, 16}, 0.0, 1.0);
        const std::vector<std::size_t> y{0, 2, 1};
        auto loss = [&](Graph& g) {
            Rng dropout_rng(23);
            return ops::softmax_cross_entropy(g, model.forward(g, g.input(x), {true, &dropout_rng}), y);
        };
        model.params().zero_grad();
        {
            Graph g;
            g.backward(loss(g));
        }
        const auto analytic = model.params().grads();
        const auto numeric = finite_difference_gradient(
            [&](ParameterSet&) {
                Graph g;
                return g.value(loss(g)).item();
            },
            model.params());
        CHECK(max_relative_error(analytic, numeric) < 1e-5);
    }
}

TEST_SUITE("optimizer") {
    TEST_CASE("sgd step") {
        ParameterSet ps;
        auto& theta = ps.add("theta", Tensor({1}, 1.0));
        theta.zero_grad();
        theta.grad()[0] = 2.0;
        OptimizerState opt({OptimizerKind::sgd, 0.1});
        opt.step(ps);
        CHECK(theta[0] == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(opt.step_count() == 1);
        CHECK(theta.grad()[0] == 0.0);
    }

    TEST_CASE("zero gradients leave parameters unchanged") {
        for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
            ParameterSet ps;
            auto& theta = ps.add("theta", Tensor({3}, {1.0, -2.0, 0.5}));
            ps.zero_grad();
            OptimizerState opt({kind, 0.1});
            opt.step(ps);
            CHECK(theta[0] == 1.0);
            CHECK(theta[1] == -2.0);
            CHECK(theta[2] == 0.5);
        }
    }

    TEST_CASE("first adam step moves by about lr") {
        ParameterSet ps;
        auto& theta = ps.add("theta", Tensor({1}, 0.0));
        theta.zero_grad();
        theta.grad()[0] = 1.0;
        OptimizerState opt({OptimizerKind::adam, 1e-3});
        opt.step(ps);
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        CHECK(theta[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
        REQUIRE(opt.first_moment().size() == 1);
        CHECK(opt.first_moment()[0].size() == 1);
        CHECK(opt.second_moment()[0].size() == 1);
    }

    TEST_CASE("step count grows by one per step and missing gradients are an error") {
        ParameterSet ps;
        ps.add("a", Tensor({2}, 1.0));
        OptimizerState opt;
        CHECK_THROWS_AS(opt.step(ps), ContractError);
        for (int i = 1; i <= 3; ++i) {
            ps.zero_grad();
            opt.step(ps);
            CHECK(opt.step_count() == static_cast<std::uint64_t>(i));
        }
    }

    TEST_CASE("checksum lines") {
        ParameterSet ps;
        ps.add("w", Tensor({2}, 1.0));
        ps.add("b", Tensor({1}, 0.0));
        std::ostringstream os;
        dump_checksums(os, 7, ps);
        std::istringstream in(os.str());
        std::string line;
        std::getline(in, line);
        std::ostringstream hex;
        hex << std::hex << ParameterSet::checksum(ps.at("w"));
        CHECK(line == "7,w," + hex.str());
        std::getline(in, line);
        CHECK(line.rfind("7,b,", 0) == 0);
    }

    TEST_CASE("identical seeds give bit-identical trajectories") {
        auto run = [] {
            ModelSpec spec;
            spec.dim = 4;
            spec.hidden = {5};
            spec.dense_dropout = 0.3;
            spec.task = {TaskKind::expression, 3};
            Model model = build_mlp(spec, 5);
            OptimizerState opt;
            Rng data(6), drop(7);
            std::vector<std::uint64_t> sums;
            for (int step = 0; step < 10; ++step) {
                const Tensor x = random_tensor(data, {4, 4});
                model.params().zero_grad();
                Graph g;
                g.backward(ops::softmax_cross_entropy(g, model.forward(g, g.input(x), {true, &drop}),
                                                      std::vector<std::size_t>{0, 1, 2, 0}));
                opt.step(model.params());
                sums.push_back(model.params().checksum());
            }
            return sums;
        };
        CHECK(run() == run());
    }
}
