#include <gtest/gtest.h>

#include "stihrl/tensor.hpp"

using namespace stihrl;

namespace {

// Naive forward pass written without the library's matvec helpers.
Vec oracle_forward(const MlpParams& p, const Vec& x) {
    Vec a = x;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        const auto& w = p.weights[l];
        Vec z(w.rows());
        for (std::size_t i = 0; i < w.rows(); ++i) {
            long double s = p.biases[l][i];
            for (std::size_t j = 0; j < w.cols(); ++j) s += static_cast<long double>(w(i, j)) * a[j];
            z[i] = static_cast<double>(s);
        }
        const bool last = l + 1 == p.weights.size();
        if (!last) {
            for (auto& v : z) v = p.hidden == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
        } else if (p.head == OutputHead::softmax) {
            long double total = 0;
            for (auto v : z) total += std::exp(static_cast<long double>(v));
            for (auto& v : z) v = static_cast<double>(std::exp(static_cast<long double>(v)) / total);
        }
        a = z;
    }
    return a;
}

Vec random_vec(std::size_t n, Rng& rng) {
    Vec v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST(MlpForward, ZeroNetworkGivesZero) {
    const auto p = MlpParams::zeros({3, 4, 2}, Activation::relu, OutputHead::linear);
    const auto [y, cache] = mlp_forward(p, Vec{1.0, 2.0, 3.0});
    EXPECT_EQ(y, (Vec{0.0, 0.0}));
}

TEST(MlpForward, IdentityReluLayer) {
    // Two layers: identity then identity, hidden relu clips the negative entry.
    auto p = MlpParams::zeros({2, 2, 2}, Activation::relu, OutputHead::linear);
    p.weights[0] = Matrix::identity(2);
    p.weights[1] = Matrix::identity(2);
    const auto [y, cache] = mlp_forward(p, Vec{1.0, -1.0});
    EXPECT_EQ(y, (Vec{1.0, 0.0}));
}

TEST(MlpForward, MatchesNaiveOracle) {
    Rng rng(7);
    for (auto head : {OutputHead::linear, OutputHead::softmax}) {
        for (auto act : {Activation::relu, Activation::tanh}) {
            const auto p = MlpParams::init({5, 7, 3}, act, head, rng);
            for (int t = 0; t < 20; ++t) {
                const auto x = random_vec(5, rng);
                const auto [y, cache] = mlp_forward(p, x);
                const auto o = oracle_forward(p, x);
                for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], o[i], 1e-12);
            }
        }
    }
}

TEST(MlpForward, DimensionMismatchThrows) {
    Rng rng(1);
    const auto p = MlpParams::init({3, 2}, Activation::relu, OutputHead::linear, rng);
    EXPECT_THROW(mlp_forward(p, Vec{1.0}), Error);
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(2);
    const auto p = MlpParams::init({4, 5, 3}, Activation::relu, OutputHead::linear, rng);
    const auto [y, cache] = mlp_forward(p, random_vec(4, rng));
    auto g = mlp_backward(p, cache, Vec(3, 0.0));
    auto grads = g.params.params();
    for (double v : flatten(grads)) EXPECT_EQ(v, 0.0);
}

TEST(MlpBackward, SingleWeightLinearModel) {
    auto p = MlpParams::zeros({1, 1}, Activation::relu, OutputHead::linear);
    p.weights[0](0, 0) = 0.5;
    const auto [y, cache] = mlp_forward(p, Vec{3.0});
    const auto g = mlp_backward(p, cache, Vec{1.0});
    EXPECT_DOUBLE_EQ(g.params.weights[0](0, 0), 3.0);
    EXPECT_DOUBLE_EQ(g.input[0], 0.5);
}

TEST(MlpBackward, MatchesFiniteDifferences) {
    Rng rng(4);
    for (auto head : {OutputHead::linear, OutputHead::softmax}) {
        for (auto act : {Activation::tanh, Activation::relu}) {
            auto p = MlpParams::init({6, 8, 4}, act, head, rng);
            const auto x = random_vec(6, rng);
            const auto c = random_vec(4, rng);
            auto loss = [&] {
                const auto [y, cache] = mlp_forward(p, x);
                return dot(y, c);
            };
            const auto [y, cache] = mlp_forward(p, x);
            auto g = mlp_backward(p, cache, c);
            auto params = p.params();
            auto grads = g.params.params();
            EXPECT_LT(finite_diff_check(loss, params, flatten(grads)), 1e-4);
            // Input gradient too.
            Vec xv = x;
            auto loss_x = [&] {
                const auto [yy, cc] = mlp_forward(p, xv);
                return dot(yy, c);
            };
            EXPECT_LT(finite_diff_check(loss_x, std::span<double>(xv), g.input), 1e-4);
        }
    }
}

TEST(MlpBackward, StaleCacheIsRejected) {
    Rng rng(5);
    auto p = MlpParams::init({2, 2}, Activation::relu, OutputHead::linear, rng);
    const auto [y, cache] = mlp_forward(p, Vec{1.0, 1.0});
    ++p.revision;
    EXPECT_THROW(mlp_backward(p, cache, Vec{1.0, 1.0}), Error);
}

TEST(Softmax, KnownValues) {
    EXPECT_EQ(softmax(Vec{0.0, 0.0}), (Vec{0.5, 0.5}));
    const auto big = softmax(Vec{1000.0, 1000.0});
    EXPECT_DOUBLE_EQ(big[0], 0.5);
    EXPECT_DOUBLE_EQ(big[1], 0.5);
    const auto p = softmax(Vec{1.0, 2.0, 3.0});
    EXPECT_NEAR(p[0], 0.0900, 1e-4);
    EXPECT_NEAR(p[1], 0.2447, 1e-4);
    EXPECT_NEAR(p[2], 0.6652, 1e-4);
}

TEST(Softmax, ValidDistributionAndShiftInvariant) {
    Rng rng(6);
    for (int t = 0; t < 1000; ++t) {
        const auto n = 1 + rng.below(30);
        Vec z(n);
        for (auto& v : z) v = rng.uniform(-50.0, 50.0);
        const auto p = softmax(z);
        double s = 0.0;
        for (double v : p) {
            EXPECT_GT(v, 0.0 - 1e-300);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
        const double c = rng.uniform(-100.0, 100.0);
        Vec shifted = z;
        for (auto& v : shifted) v += c;
        const auto q = softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
}

TEST(Adam, ZeroGradientLeavesParamsButCountsStep) {
    Vec w{1.0, -2.0};
    Vec g{0.0, 0.0};
    ParamList params{{"w", w}};
    ParamList grads{{"w", g}};
    AdamState s;
    adam_step(params, grads, s);
    EXPECT_EQ(w, (Vec{1.0, -2.0}));
    EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Vec w{0.0};
    Vec g{1.0};
    ParamList params{{"w", w}};
    ParamList grads{{"w", g}};
    AdamState s(0.001);
    adam_step(params, grads, s, Direction::descent);
    // m̂ = 1, v̂ = 1 after bias correction.
    EXPECT_NEAR(w[0], -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, AscentMirrorsDescent) {
    Vec a{0.5}, b{0.5}, g{0.3};
    ParamList pa{{"w", a}}, pb{{"w", b}}, grads{{"w", g}};
    AdamState sa, sb;
    adam_step(pa, grads, sa, Direction::ascent);
    adam_step(pb, grads, sb, Direction::descent);
    EXPECT_DOUBLE_EQ(a[0] - 0.5, 0.5 - b[0]);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    Vec w{1.0}, g{std::nan("")};
    ParamList params{{"policy.W0", w}}, grads{{"policy.W0", g}};
    AdamState s;
    try {
        adam_step(params, grads, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("policy.W0"), std::string::npos);
    }
    EXPECT_EQ(w[0], 1.0);
}

TEST(FiniteDiff, Quadratic) {
    Vec w{3.0};
    const Vec analytic{6.0};
    EXPECT_LT(finite_diff_check([&] { return w[0] * w[0]; }, std::span<double>(w), analytic), 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
    Vec w{1.0, 2.0};
    const Vec analytic{0.0, 0.0};
    EXPECT_LT(finite_diff_check([] { return 4.0; }, std::span<double>(w), analytic), 1e-12);
}

TEST(Checkpoint, MlpJsonRoundTrip) {
    Rng rng(8);
    const auto p = MlpParams::init({3, 4, 2}, Activation::tanh, OutputHead::softmax, rng);
    const nlohmann::json j = p;
    const auto back = j.get<MlpParams>();
    EXPECT_EQ(back.weights, p.weights);
    EXPECT_EQ(back.biases, p.biases);
    EXPECT_EQ(back.hidden, p.hidden);
    EXPECT_EQ(back.head, p.head);
}
