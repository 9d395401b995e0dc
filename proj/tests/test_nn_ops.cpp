#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "vfift/nn_ops.hpp"

using namespace vfift;

namespace {

ConvParams make_conv(int ci, int co, int k, int stride, int pad, Rng& rng) {
    ConvParams p = ConvParams::create(ci, co, k, stride, pad, rng);
    // Random bias too; create() zeroes it, which would mask bias-indexing bugs.
    p.bias = Tensor::uniform({co}, -0.5, 0.5, rng).set_requires_grad(true);
    return p;
}

} // namespace

TEST_CASE("kaiming_uniform stays within the fan-in bound") {
    Rng rng(1);
    Tensor w = kaiming_uniform({64, 9}, 9, rng);
    const double bound = std::sqrt(6.0 / 9.0);
    double spread = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) {
        CHECK(std::abs(w.value_at(i)) <= bound);
        spread = std::max(spread, std::abs(w.value_at(i)));
    }
    CHECK(spread > 0.5 * bound); // actually fills the range
}

TEST_CASE("conv2d matches the naive reference over representative geometries") {
    Rng rng(2);
    struct Cfg {
        int ci, co, k, stride, pad, h, w;
    };
    for (const Cfg& c : {Cfg{3, 5, 3, 1, 1, 8, 6}, Cfg{4, 2, 3, 2, 1, 8, 8}, Cfg{2, 3, 1, 1, 0, 5, 7},
                         Cfg{1, 1, 5, 1, 2, 9, 9}, Cfg{3, 4, 4, 2, 1, 8, 8}}) {
        ConvParams p = make_conv(c.ci, c.co, c.k, c.stride, c.pad, rng);
        Tensor x = Tensor::uniform({2, c.ci, c.h, c.w}, -1.0, 1.0, rng);
        Tensor got = conv2d(x, p);
        Tensor want = oracle::conv2d(x, p.weight, p.bias, c.stride, c.pad);
        REQUIRE(got.shape() == want.shape());
        CHECK(oracle::max_abs_diff(got, want) < 1e-12);
    }
    ConvParams p = make_conv(3, 2, 3, 1, 1, rng);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 4, 8, 8}), p), DimensionError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(3);
    ConvParams p = make_conv(2, 3, 3, 2, 1, rng);
    Tensor x = Tensor::uniform({1, 2, 6, 6}, -1.0, 1.0, rng).set_requires_grad(true);
    auto loss = [&] { return mean(mul(conv2d(x, p), conv2d(x, p))); };
    backward(loss());
    for (Tensor* t : {&x, &p.weight, &p.bias}) {
        for (int64_t i = 0; i < std::min<int64_t>(t->numel(), 20); ++i) {
            const double fd = oracle::fd_derivative([&] { return loss().item(); }, *t, i, 1e-6);
            CHECK(t->grad()[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("conv_transpose2d doubles resolution and matches the scatter reference") {
    Rng rng(4);
    ConvParams p = make_conv(3, 2, 4, 2, 1, rng);
    Tensor x = Tensor::uniform({2, 3, 5, 7}, -1.0, 1.0, rng);
    Tensor got = conv_transpose2d(x, p);
    CHECK(got.shape() == Shape{2, 2, 10, 14});
    Tensor want = oracle::conv_transpose2d(x, p.weight, p.bias, 2, 1);
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);

    // Only exact-2x configurations are accepted.
    ConvParams bad = make_conv(3, 2, 3, 1, 1, rng);
    CHECK_THROWS_AS(conv_transpose2d(x, bad), ConfigError);
}

TEST_CASE("conv_transpose2d is the adjoint of the matching gather") {
    // <tconv(x), y> must equal <x, gather(y)> where gather correlates y with
    // the same kernel at the scatter positions; with zero bias this pins the
    // transpose relationship numerically.
    Rng rng(5);
    ConvParams p = ConvParams::create(2, 3, 4, 2, 1, rng);
    Tensor x = Tensor::uniform({1, 2, 4, 4}, -1.0, 1.0, rng).set_requires_grad(true);
    Tensor y = Tensor::uniform({1, 3, 8, 8}, -1.0, 1.0, rng);

    Tensor up = conv_transpose2d(x, p);
    double lhs = sum(mul(up, y)).item();

    // d<tconv(x),y>/dx recovers the gather of y; compare against autograd.
    backward(sum(mul(up, y)));
    double rhs = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x.grad()[static_cast<size_t>(i)] * x.value_at(i);
    // Both express sum_i x_i * gather(y)_i since tconv is linear in x.
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("avg_pool2 matches the block-mean reference and rejects odd sizes") {
    Rng rng(6);
    Tensor x = Tensor::uniform({2, 3, 6, 8}, -1.0, 1.0, rng);
    CHECK(oracle::max_abs_diff(avg_pool2(x), oracle::avg_pool2(x)) < 1e-15);
    CHECK_THROWS_AS(avg_pool2(Tensor::zeros({1, 1, 5, 4})), DimensionError);

    Tensor g = Tensor::uniform({1, 1, 4, 4}, -1.0, 1.0, rng).set_requires_grad(true);
    backward(sum(avg_pool2(g)));
    // Each input contributes to exactly one output cell with weight 1/4.
    for (size_t i = 0; i < 16; ++i) CHECK(g.grad()[i] == 0.25);
}

TEST_CASE("leaky_relu and sigmoid pointwise math and gradients") {
    Tensor x = Tensor::from_data({4}, {-2.0, -0.1, 0.3, 1.5}).set_requires_grad(true);
    Tensor lr = leaky_relu(x, 0.1);
    CHECK(lr.value_at(0) == doctest::Approx(-0.2));
    CHECK(lr.value_at(1) == doctest::Approx(-0.01));
    CHECK(lr.value_at(2) == doctest::Approx(0.3));
    CHECK(lr.value_at(3) == doctest::Approx(1.5));

    Tensor s = sigmoid(x);
    for (int i = 0; i < 4; ++i)
        CHECK(s.value_at(i) == doctest::Approx(1.0 / (1.0 + std::exp(-x.value_at(i)))));

    auto loss = [&] { return mean(sigmoid(leaky_relu(x, 0.1))); };
    backward(loss());
    for (int64_t i = 0; i < 4; ++i) {
        const double fd = oracle::fd_derivative([&] { return loss().item(); }, x, i, 1e-7);
        CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("layer_norm normalizes channels at every position") {
    Rng rng(7);
    LayerNormParams p = LayerNormParams::create(6);
    Tensor x = Tensor::uniform({2, 6, 3, 3}, -3.0, 5.0, rng);
    Tensor y = layer_norm(x, p);

    // gamma=1, beta=0 at creation, so outputs must have near-zero mean and
    // near-unit variance over channels (epsilon shifts variance slightly).
    for (int n = 0; n < 2; ++n)
        for (int pos = 0; pos < 9; ++pos) {
            double m = 0.0, var = 0.0;
            for (int c = 0; c < 6; ++c) m += y.value_at((n * 6 + c) * 9 + pos);
            m /= 6;
            for (int c = 0; c < 6; ++c) {
                const double d = y.value_at((n * 6 + c) * 9 + pos) - m;
                var += d * d;
            }
            var /= 6;
            CHECK(std::abs(m) < 1e-12);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }

    // The affine pair shifts and scales per channel.
    p.gamma.mutable_values()[2] = 3.0;
    p.beta.mutable_values()[2] = -1.0;
    Tensor y2 = layer_norm(x, p);
    CHECK(y2.value_at(2 * 9) == doctest::Approx(3.0 * y.value_at(2 * 9) - 1.0));

    // The [M,C] form agrees with the 4D form on transposed data.
    Tensor flat = Tensor::from_data({2, 3}, {1.0, 2.0, 4.0, -1.0, 0.0, 1.0});
    LayerNormParams p3 = LayerNormParams::create(3);
    Tensor yf = layer_norm(flat, p3);
    for (int row = 0; row < 2; ++row) {
        double m = (yf.value_at(row * 3) + yf.value_at(row * 3 + 1) + yf.value_at(row * 3 + 2)) / 3;
        CHECK(std::abs(m) < 1e-12);
    }
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 4}), p3), DimensionError);
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(8);
    LayerNormParams p = LayerNormParams::create(4);
    Tensor x = Tensor::uniform({1, 4, 2, 2}, -1.0, 1.0, rng).set_requires_grad(true);
    Tensor target = Tensor::uniform({1, 4, 2, 2}, -1.0, 1.0, rng);
    auto loss = [&] {
        Tensor d = sub(layer_norm(x, p), target);
        return mean(mul(d, d));
    };
    backward(loss());
    for (Tensor* t : {&x, &p.gamma, &p.beta})
        for (int64_t i = 0; i < t->numel(); ++i) {
            const double fd = oracle::fd_derivative([&] { return loss().item(); }, *t, i, 1e-6);
            CHECK(t->grad()[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("softmax matches the naive reference and survives huge logits") {
    Tensor x = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
    Tensor y = softmax(x, 1);
    for (int row = 0; row < 2; ++row) {
        std::vector<double> z{x.value_at(row * 3), x.value_at(row * 3 + 1), x.value_at(row * 3 + 2)};
        const std::vector<double> w = oracle::softmax(z);
        double total = 0.0;
        for (int c = 0; c < 3; ++c) {
            CHECK(y.value_at(row * 3 + c) == doctest::Approx(w[c]).epsilon(1e-14));
            total += y.value_at(row * 3 + c);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }

    // Max subtraction keeps exp() in range.
    Tensor big = Tensor::from_data({1, 2}, {1000.0, 1001.0});
    Tensor yb = softmax(big, 1);
    CHECK(std::isfinite(yb.value_at(0)));
    CHECK(yb.value_at(1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));

    // Softmax along a non-trailing axis.
    Tensor x3 = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y0 = softmax(x3, 0);
    for (int i = 0; i < 4; ++i)
        CHECK(y0.value_at(i) + y0.value_at(4 + i) == doctest::Approx(1.0).epsilon(1e-14));

    CHECK_THROWS_AS(softmax(x, 2), DimensionError);
}

TEST_CASE("softmax gradients match finite differences") {
    Rng rng(9);
    Tensor x = Tensor::uniform({3, 4}, -2.0, 2.0, rng).set_requires_grad(true);
    Tensor pick = Tensor::uniform({3, 4}, 0.0, 1.0, rng);
    auto loss = [&] { return sum(mul(softmax(x, 1), pick)); };
    backward(loss());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double fd = oracle::fd_derivative([&] { return loss().item(); }, x, i, 1e-6);
        CHECK(x.grad()[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("linear applies xW^T + b on both accepted layouts") {
    Rng rng(10);
    Tensor w = Tensor::uniform({3, 2}, -1.0, 1.0, rng);
    Tensor b = Tensor::from_data({3}, {0.1, -0.2, 0.3});

    Tensor x4 = Tensor::uniform({2, 2, 3, 3}, -1.0, 1.0, rng);
    Tensor y4 = linear(x4, w, b);
    CHECK(y4.shape() == Shape{2, 3, 3, 3});
    CHECK(oracle::max_abs_diff(y4, oracle::linear_nchw(x4, w, b)) < 1e-13);

    Tensor x2 = Tensor::from_data({2, 2}, {1.0, 2.0, -1.0, 0.5});
    Tensor y2 = linear(x2, w, b);
    CHECK(y2.shape() == Shape{2, 3});
    for (int m = 0; m < 2; ++m)
        for (int o = 0; o < 3; ++o) {
            double want = b.value_at(o);
            for (int c = 0; c < 2; ++c) want += w.value_at(o * 2 + c) * x2.value_at(m * 2 + c);
            CHECK(y2.value_at(m * 3 + o) == doctest::Approx(want).epsilon(1e-14));
        }

    // Bias is optional.
    Tensor yn = linear(x2, w, Tensor());
    for (int m = 0; m < 2; ++m)
        for (int o = 0; o < 3; ++o)
            CHECK(yn.value_at(m * 3 + o) ==
                  doctest::Approx(y2.value_at(m * 3 + o) - b.value_at(o)).epsilon(1e-12));
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(11);
    Tensor w = Tensor::uniform({3, 4}, -1.0, 1.0, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({3}, -0.5, 0.5, rng).set_requires_grad(true);
    Tensor x = Tensor::uniform({1, 4, 2, 2}, -1.0, 1.0, rng).set_requires_grad(true);
    auto loss = [&] {
        Tensor y = linear(x, w, b);
        return mean(mul(y, y));
    };
    backward(loss());
    for (Tensor* t : {&x, &w, &b})
        for (int64_t i = 0; i < t->numel(); ++i) {
            const double fd = oracle::fd_derivative([&] { return loss().item(); }, *t, i, 1e-6);
            CHECK(t->grad()[static_cast<size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("mlp composes linear, leaky_relu, linear") {
    Rng rng(12);
    MlpParams p = MlpParams::create(4, 2.0, rng);
    CHECK(p.w1.shape() == Shape{8, 4});
    CHECK(p.w2.shape() == Shape{4, 8});
    Tensor x = Tensor::uniform({1, 4, 2, 2}, -1.0, 1.0, rng);
    Tensor got = mlp(x, p);
    CHECK(got.shape() == x.shape());

    Tensor h = oracle::linear_nchw(x, p.w1, p.b1);
    std::vector<double> hv(static_cast<size_t>(h.numel()));
    for (int64_t i = 0; i < h.numel(); ++i) {
        const double v = h.value_at(i);
        hv[static_cast<size_t>(i)] = v > 0.0 ? v : 0.1 * v;
    }
    Tensor want = oracle::linear_nchw(Tensor::from_data(h.shape(), std::move(hv)), p.w2, p.b2);
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);
}
