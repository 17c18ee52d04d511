#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "sasforge/autodiff.hpp"
#include "sasforge/rng.hpp"

using namespace sasforge;
using V = Var<double>;
using Tn = Tensor<double>;

namespace {

Tn randn(const std::vector<int>& shape, Pcg32& rng, double scale = 1.0) {
    Tn t(shape);
    for (auto& v : t.data) v = scale * rng.gaussian();
    return t;
}

// Uniform with magnitude bounded away from zero, for kinked ops.
Tn rand_away_from_zero(const std::vector<int>& shape, Pcg32& rng) {
    Tn t(shape);
    for (auto& v : t.data) {
        const double m = rng.uniform(0.15, 1.5);
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

Tn rand_positive(const std::vector<int>& shape, Pcg32& rng) {
    Tn t(shape);
    for (auto& v : t.data) v = rng.uniform(0.4, 2.0);
    return t;
}

// Compares reverse-mode gradients of a scalar function against central
// finite differences on every element of every input.
double max_grad_rel_err(const std::function<V(const std::vector<V>&)>& fn,
                        std::vector<V>& inputs, double h = 1e-5) {
    V out = fn(inputs);
    REQUIRE(out.numel() == 1);
    const auto grads = backward(out, inputs, false);

    auto eval = [&]() {
        NoGradGuard ng;
        return fn(inputs).value()[0];
    };
    double worst = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tn& val = inputs[i].value_mut();
        for (std::int64_t j = 0; j < val.numel(); ++j) {
            const double orig = val[j];
            val[j] = orig + h;
            const double fp = eval();
            val[j] = orig - h;
            const double fm = eval();
            val[j] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double ad = grads[i].value()[j];
            const double rel =
                std::abs(ad - fd) / std::max({1e-3, std::abs(ad), std::abs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Fixed random weighted sum turns any op output into a scalar while
// exercising the full Jacobian. The weights are drawn once so repeated
// evaluations (finite differencing) see the same function.
double check_weighted(const std::function<V(const std::vector<V>&)>& op,
                      std::vector<V>& inputs, Pcg32& rng) {
    Tn w;
    {
        NoGradGuard ng;
        w = Tn(op(inputs).shape());
    }
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
    const V cw = constant(std::move(w));
    return max_grad_rel_err(
        [&op, cw](const std::vector<V>& in) { return sum(mul(op(in), cw)); },
        inputs);
}

// Textbook convolution straight from the definition, as an oracle.
Tn conv_reference(const Tn& x, const Tn& w, const Tn& b, int stride, int pad) {
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    Tn y({N, Co, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b.data.empty() ? 0.0 : b[co];
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at4(n, ci, iy, ix) * w.at4(co, ci, ky, kx);
                            }
                    y.at4(n, co, oy, ox) = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("identity kernel convolution passes input through") {
    Pcg32 rng(1, 0);
    V x(randn({2, 3, 5, 7}, rng), true);
    Tn w({3, 3, 1, 1});
    for (int co = 0; co < 3; ++co) w.at4(co, co, 0, 0) = 1.0;
    V y = conv2d(x, V(w, true), V(Tn({3}), true), 1, 0);
    REQUIRE(y.value().data == x.value().data);
}

TEST_CASE("all-ones 3x3 kernel counts overlap on an all-ones input") {
    V x(Tn::full({1, 1, 5, 5}, 1.0), false);
    V w(Tn::full({1, 1, 3, 3}, 1.0), false);
    V y = conv2d(x, w, V(Tn({1})), 1, 1);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 5, 5});
    REQUIRE(y.value().at4(0, 0, 2, 2) == 9.0);
    REQUIRE(y.value().at4(0, 0, 0, 0) == 4.0);
    REQUIRE(y.value().at4(0, 0, 0, 4) == 4.0);
    REQUIRE(y.value().at4(0, 0, 4, 0) == 4.0);
    REQUIRE(y.value().at4(0, 0, 4, 4) == 4.0);
    REQUIRE(y.value().at4(0, 0, 0, 2) == 6.0);
}

TEST_CASE("conv2d matches the nested-loop reference") {
    Pcg32 rng(7, 0);
    for (int trial = 0; trial < 12; ++trial) {
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(3));
        const int k = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
        const int H = 5 + static_cast<int>(rng.below(5));
        const int W = 5 + static_cast<int>(rng.below(5));
        if (H + 2 * pad < k || W + 2 * pad < k) continue;
        const Tn x = randn({2, 3, H, W}, rng);
        const Tn w = randn({4, 3, k, k}, rng);
        const Tn b = randn({4}, rng);
        const V y = conv2d(V(x), V(w), V(b), stride, pad);
        const Tn ref = conv_reference(x, w, b, stride, pad);
        REQUIRE(y.shape() == ref.shape);
        double worst = 0;
        for (std::int64_t i = 0; i < ref.numel(); ++i)
            worst = std::max(worst, std::abs(y.value()[i] - ref[i]));
        REQUIRE(worst < 1e-10);
    }
}

TEST_CASE("sum of squares has the analytic gradient") {
    V x(Tn({3}, {1.0, 2.0, 3.0}), true);
    V loss = sum(square(x));
    const auto g = backward(loss, {x});
    REQUIRE(g[0].value().data == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("gradient w.r.t. an unused tensor is zero") {
    V x(Tn({4}, {1, 2, 3, 4}), true);
    V unused(Tn({2, 2}, {5, 6, 7, 8}), true);
    V loss = sum(square(x));
    const auto g = backward(loss, {x, unused});
    REQUIRE(g[1].shape() == std::vector<int>{2, 2});
    for (double v : g[1].value().data) REQUIRE(v == 0.0);
}

TEST_CASE("every primitive passes randomized finite-difference checks") {
    constexpr int kSeeds = 10;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        Pcg32 rng(static_cast<std::uint64_t>(seed), 99);

        SECTION("elementwise, seed " + std::to_string(seed)) {
            std::vector<V> ab{V(randn({3, 4}, rng), true), V(randn({3, 4}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return add(in[0], in[1]); },
                        ab, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return sub(in[0], in[1]); },
                        ab, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return mul(in[0], in[1]); },
                        ab, rng) < 1e-4);

            std::vector<V> kinked{V(rand_away_from_zero({2, 3, 4, 4}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return relu(in[0]); },
                        kinked, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return leaky_relu(in[0], 0.2);
                        },
                        kinked, rng) < 1e-4);

            std::vector<V> smooth{V(randn({5, 3}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return tanh_op(in[0]); },
                        smooth, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return square(in[0]); },
                        smooth, rng) < 1e-4);
            REQUIRE(max_grad_rel_err(
                        [](const std::vector<V>& in) { return mean(in[0]); },
                        smooth) < 1e-4);
            REQUIRE(max_grad_rel_err(
                        [](const std::vector<V>& in) { return sum(in[0]); },
                        smooth) < 1e-4);

            std::vector<V> positive{V(rand_positive({4, 6}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return sqrt_op(in[0]); },
                        positive, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return pow_scalar(in[0], -1.5);
                        },
                        positive, rng) < 1e-4);
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return l2_norm_per_sample(in[0]);
                        },
                        positive, rng) < 1e-4);
        }

        SECTION("linear and matmul, seed " + std::to_string(seed)) {
            std::vector<V> lin{V(randn({4, 6}, rng), true),
                               V(randn({3, 6}, rng), true),
                               V(randn({3}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return linear(in[0], in[1], in[2]);
                        },
                        lin, rng) < 1e-4);

            std::vector<V> mm{V(randn({3, 4}, rng), true),
                              V(randn({4, 5}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return matmul(in[0], in[1]);
                        },
                        mm, rng) < 1e-4);
        }

        SECTION("conv family, seed " + std::to_string(seed)) {
            const int stride = 1 + (seed % 2);
            std::vector<V> cv{V(randn({2, 2, 5, 6}, rng), true),
                              V(randn({3, 2, 3, 3}, rng), true),
                              V(randn({3}, rng), true)};
            REQUIRE(check_weighted(
                        [stride](const std::vector<V>& in) {
                            return conv2d(in[0], in[1], in[2], stride, 1);
                        },
                        cv, rng) < 1e-4);

            std::vector<V> ct{V(randn({2, 3, 3, 3}, rng), true),
                              V(randn({3, 2, 3, 3}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return conv2d_transpose(in[0], in[1], 2, 1, 5, 6);
                        },
                        ct, rng) < 1e-4);
        }

        SECTION("pooling and resizing, seed " + std::to_string(seed)) {
            // Distinct values keep the max unambiguous under perturbation.
            Tn pool_in({2, 2, 4, 4});
            for (std::int64_t i = 0; i < pool_in.numel(); ++i)
                pool_in[i] = rng.uniform(-1.0, 1.0) + 0.01 * static_cast<double>(i % 7);
            std::vector<V> mp{V(pool_in, true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) { return maxpool2x2(in[0]); },
                        mp, rng) < 1e-4);

            std::vector<V> up{V(randn({2, 3, 3, 4}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return nearest_upsample2x(in[0]);
                        },
                        up, rng) < 1e-4);

            std::vector<V> inorm{V(randn({2, 2, 4, 4}, rng), true)};
            REQUIRE(check_weighted(
                        [](const std::vector<V>& in) {
                            return instance_norm2d(in[0]);
                        },
                        inorm, rng) < 1e-4);
        }
    }
}

TEST_CASE("three-layer conv net gradients match finite differences") {
    for (int seed = 1; seed <= 3; ++seed) {
        Pcg32 rng(static_cast<std::uint64_t>(100 + seed), 5);
        std::vector<V> params{
            V(randn({2, 1, 8, 8}, rng), true),        // input
            V(randn({4, 1, 3, 3}, rng, 0.5), true),   // conv1 w
            V(randn({4}, rng, 0.1), true),            // conv1 b
            V(randn({8, 4, 3, 3}, rng, 0.3), true),   // conv2 w
            V(randn({8}, rng, 0.1), true),            // conv2 b
            V(randn({1, 32}, rng, 0.3), true),        // head w
            V(randn({1}, rng, 0.1), true),            // head b
        };
        auto net = [](const std::vector<V>& p) {
            V h = leaky_relu(conv2d(p[0], p[1], p[2], 2, 1), 0.2);
            h = leaky_relu(conv2d(h, p[3], p[4], 2, 1), 0.2);
            h = reshape(h, {2, 32});
            return mean(square(linear(h, p[5], p[6])));
        };
        REQUIRE(max_grad_rel_err(net, params) < 1e-4);
    }
}

TEST_CASE("penalty second-order gradients match differences of first gradients") {
    for (int seed = 1; seed <= 3; ++seed) {
        Pcg32 rng(static_cast<std::uint64_t>(200 + seed), 5);
        const Tn x0 = randn({2, 1, 8, 8}, rng);
        std::vector<V> params{
            V(randn({4, 1, 3, 3}, rng, 0.5), true), V(randn({4}, rng, 0.1), true),
            V(randn({8, 4, 3, 3}, rng, 0.3), true), V(randn({8}, rng, 0.1), true),
            V(randn({1, 32}, rng, 0.3), true),      V(randn({1}, rng, 0.1), true),
        };
        auto critic = [&](const V& x, const std::vector<V>& p) {
            V h = leaky_relu(conv2d(x, p[0], p[1], 2, 1), 0.2);
            h = leaky_relu(conv2d(h, p[2], p[3], 2, 1), 0.2);
            return linear(reshape(h, {2, 32}), p[4], p[5]);
        };
        auto penalty_value = [&]() {
            V x(x0, true);
            V s = sum(critic(x, params));
            V gx = backward(s, {x}, false)[0];
            NoGradGuard ng;
            V n = l2_norm_per_sample(gx);
            return mean(square(add_scalar(n, -1.0))).value()[0];
        };

        // Differentiable path: gradient built with create_graph, then a
        // second backward through the penalty.
        V x(x0, true);
        V s = sum(critic(x, params));
        V gx = backward(s, {x}, true)[0];
        V pen = mean(square(add_scalar(l2_norm_per_sample(gx), -1.0)));
        const auto second = backward(pen, params, false);

        const double h = 1e-5;
        double worst = 0;
        for (size_t i = 0; i < params.size(); ++i) {
            Tn& val = params[i].value_mut();
            for (std::int64_t j = 0; j < val.numel(); ++j) {
                const double orig = val[j];
                val[j] = orig + h;
                const double fp = penalty_value();
                val[j] = orig - h;
                const double fm = penalty_value();
                val[j] = orig;
                const double fd = (fp - fm) / (2 * h);
                const double ad = second[i].value()[j];
                worst = std::max(worst, std::abs(ad - fd) /
                                            std::max({1e-3, std::abs(ad),
                                                      std::abs(fd)}));
            }
        }
        REQUIRE(worst < 1e-3);
    }
}

TEST_CASE("second derivatives are exact on a cubic") {
    V x(Tn({3}, {0.5, -1.0, 2.0}), true);
    // f = sum(x^3) via x*x*x; grad 3x^2; sum(grad) differentiates to 6x.
    V f = sum(mul(mul(x, x), x));
    V gx = backward(f, {x}, true)[0];
    for (int i = 0; i < 3; ++i)
        REQUIRE(gx.value()[i] ==
                Catch::Approx(3 * x.value()[i] * x.value()[i]).margin(1e-12));
    V g2 = backward(sum(gx), {x}, false)[0];
    for (int i = 0; i < 3; ++i)
        REQUIRE(g2.value()[i] == Catch::Approx(6 * x.value()[i]).margin(1e-12));
}

TEST_CASE("backward is linear in the output") {
    Pcg32 rng(31, 4);
    V x(randn({4, 4}, rng), true);
    Tn wa(x.shape()), wb(x.shape());
    for (auto& v : wa.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : wb.data) v = rng.uniform(-1.0, 1.0);

    auto f = [&](const V& in) { return sum(mul(square(in), constant(Tn(wa)))); };
    auto g = [&](const V& in) { return sum(mul(tanh_op(in), constant(Tn(wb)))); };
    const double a = 1.7, b = -0.4;
    const auto gf = backward(f(x), {x})[0];
    const auto gg = backward(g(x), {x})[0];
    const auto gc = backward(add(mul_scalar(f(x), a), mul_scalar(g(x), b)), {x})[0];
    for (std::int64_t i = 0; i < x.numel(); ++i)
        REQUIRE(gc.value()[i] ==
                Catch::Approx(a * gf.value()[i] + b * gg.value()[i]).margin(1e-12));
}

TEST_CASE("forward and backward are deterministic") {
    auto run = [] {
        Pcg32 rng(77, 8);
        V x(Tn({2, 2, 4, 4}), true);
        for (auto& v : x.value_mut().data) v = rng.gaussian();
        V w(Tn({3, 2, 3, 3}), true);
        for (auto& v : w.value_mut().data) v = rng.gaussian();
        V b(Tn({3}), true);
        V loss = mean(square(conv2d(x, w, b, 1, 1)));
        auto g = backward(loss, {x, w, b});
        std::vector<double> out{loss.value()[0]};
        for (const auto& gr : g)
            out.insert(out.end(), gr.value().data.begin(), gr.value().data.end());
        return out;
    };
    REQUIRE(run() == run());
}

TEST_CASE("shape mismatches raise descriptive errors") {
    V a(Tn({2, 3}), true), b(Tn({3, 2}), true);
    REQUIRE_THROWS_AS(add(a, b), ShapeError);
    try {
        add(a, b);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("add") != std::string::npos);
        REQUIRE(msg.find("(2,3)") != std::string::npos);
    }
    V x(Tn({1, 2, 4, 4}), true), w(Tn({3, 5, 3, 3}), true);
    REQUIRE_THROWS_AS(conv2d(x, w, V(Tn({3})), 1, 1), ShapeError);
    REQUIRE_THROWS_AS(backward(square(a), {a}), ParamError);  // non-scalar
}

TEST_CASE("adam holds still under zero gradients") {
    std::vector<V> params{V(Tn({3}, {1.0, -2.0, 0.5}), true)};
    const std::vector<V> grads{constant(Tn({3}))};
    AdamState<double> st;
    for (int i = 0; i < 5; ++i) adam_step(params, grads, st, 0.01);
    REQUIRE(params[0].value().data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam first step moves by exactly the learning rate") {
    std::vector<V> params{V(Tn::scalar(0.0), true)};
    const std::vector<V> grads{constant(Tn::scalar(1.0))};
    AdamState<double> st;
    adam_step(params, grads, st, 0.001);
    REQUIRE(params[0].value()[0] == Catch::Approx(-0.001).margin(1e-10));
    REQUIRE(st.t == 1);
}

TEST_CASE("adam minimizes a quadratic") {
    std::vector<V> params{V(Tn::scalar(0.0), true)};
    AdamState<double> st;
    for (int i = 0; i < 100; ++i) {
        V loss = square(add_scalar(params[0], -3.0));
        auto g = backward(loss, {params[0]});
        adam_step(params, g, st, 0.1);
    }
    REQUIRE(std::abs(params[0].value()[0] - 3.0) < 0.1);
}
