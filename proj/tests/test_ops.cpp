#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace rhanet;
using testutil::check_grad;
using testutil::random_tensor;
using testutil::rel_error;

namespace {

ops::ConvParams<double> conv_params(Tensor<double> w, std::optional<Tensor<double>> b = {},
                                    int stride = 1, int padding = 0) {
    ops::ConvParams<double> p;
    p.weight = std::move(w);
    p.bias = std::move(b);
    p.stride = stride;
    p.padding = padding;
    return p;
}

} // namespace

TEST_CASE("conv2d forward values") {
    SECTION("all-ones 3x3 input and kernel, pad 1: overlap counts") {
        auto p = conv_params(Tensor<double>::ones({1, 1, 3, 3}), {}, 1, 1);
        auto y = ops::conv2d(Tensor<double>::ones({1, 1, 3, 3}), p);
        const std::vector<double> want = {4, 6, 4, 6, 9, 6, 4, 6, 4};
        CHECK(y.values() == want);
    }
    SECTION("1x1 kernel value 2, bias 1 is an affine map") {
        std::mt19937 rng(5);
        auto x = random_tensor<double>({1, 1, 4, 4}, rng);
        auto p = conv_params(Tensor<double>(Shape{1, 1, 1, 1}, {2.0}),
                             Tensor<double>(Shape{1}, {1.0}));
        auto y = ops::conv2d(x, p);
        for (size_t i = 0; i < y.values().size(); ++i)
            CHECK(y.values()[i] == Catch::Approx(2.0 * x.values()[i] + 1.0));
    }
    SECTION("delta kernel is the identity") {
        std::mt19937 rng(6);
        auto x = random_tensor<double>({1, 1, 4, 4}, rng);
        Tensor<double> w(Shape{1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
        auto y = ops::conv2d(x, conv_params(w, {}, 1, 1));
        CHECK(rel_error(y.values(), x.values()) < 1e-15);
    }
    SECTION("linearity for bias-free params") {
        std::mt19937 rng(8);
        auto x1 = random_tensor<double>({1, 2, 4, 4}, rng);
        auto x2 = random_tensor<double>({1, 2, 4, 4}, rng);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng);
        auto p = conv_params(w, {}, 1, 1);
        auto lhs = ops::conv2d(add(scale(x1, 2.0), scale(x2, -0.5)), p);
        auto rhs = add(scale(ops::conv2d(x1, p), 2.0), scale(ops::conv2d(x2, p), -0.5));
        CHECK(rel_error(lhs.values(), rhs.values()) < 1e-12);
    }
    SECTION("shape errors") {
        auto p = conv_params(Tensor<double>::ones({1, 2, 3, 3}), {}, 1, 1);
        CHECK_THROWS_AS(ops::conv2d(Tensor<double>::ones({1, 3, 4, 4}), p), ShapeError);
        auto p2 = conv_params(Tensor<double>::ones({1, 1, 3, 3}), {}, 2, 0);
        CHECK_THROWS_WITH(ops::conv2d(Tensor<double>::ones({1, 1, 4, 4}), p2),
                          Catch::Matchers::ContainsSubstring("non-integral"));
    }
}

TEST_CASE("conv2d gradients vs finite differences") {
    std::mt19937 rng(42);
    auto x = random_tensor<double>({1, 2, 4, 4}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);

    SECTION("input gradient") {
        auto f = [&](const Tensor<double>& t) { return ops::conv2d(t, conv_params(w, b, 1, 1)); };
        CHECK(check_grad(f, x) < 1e-4);
    }
    SECTION("weight gradient") {
        auto f = [&](const Tensor<double>& t) { return ops::conv2d(x, conv_params(t, b, 1, 1)); };
        CHECK(check_grad(f, w) < 1e-4);
    }
    SECTION("bias gradient") {
        auto f = [&](const Tensor<double>& t) { return ops::conv2d(x, conv_params(w, t, 1, 1)); };
        CHECK(check_grad(f, b) < 1e-4);
    }
    SECTION("stride 2") {
        auto w2 = random_tensor<double>({2, 2, 3, 3}, rng);
        auto f = [&](const Tensor<double>& t) { return ops::conv2d(t, conv_params(w2, {}, 2, 1)); };
        auto x2 = random_tensor<double>({1, 2, 5, 5}, rng);
        CHECK(check_grad(f, x2) < 1e-4);
    }
}

TEST_CASE("depthwise conv2d") {
    SECTION("channel isolation: zero kernel silences only its channel") {
        std::mt19937 rng(9);
        auto x = random_tensor<double>({1, 2, 4, 4}, rng);
        Tensor<double> w(Shape{2, 1, 3, 3});
        for (int i = 0; i < 9; ++i) w.values()[static_cast<size_t>(i)] = 1.0; // channel 0: ones
        auto y = ops::depthwise_conv2d(x, conv_params(w, {}, 1, 1));
        for (int i = 0; i < 16; ++i) {
            CHECK(y.values()[static_cast<size_t>(16 + i)] == 0.0); // channel 1 all zero
        }
        // perturbing channel 1 of the input leaves channel 0 of the output unchanged
        auto x2 = x.clone();
        for (int i = 0; i < 16; ++i) x2.values()[static_cast<size_t>(16 + i)] += 1.0;
        auto y2 = ops::depthwise_conv2d(x2, conv_params(w, {}, 1, 1));
        for (int i = 0; i < 16; ++i)
            CHECK(y2.values()[static_cast<size_t>(i)] == y.values()[static_cast<size_t>(i)]);
    }
    SECTION("delta kernel is the identity") {
        std::mt19937 rng(10);
        auto x = random_tensor<double>({2, 3, 4, 4}, rng);
        Tensor<double> w(Shape{3, 1, 3, 3}, 0.0);
        for (int c = 0; c < 3; ++c) w.values()[static_cast<size_t>(c * 9 + 4)] = 1.0;
        auto y = ops::depthwise_conv2d(x, conv_params(w, {}, 1, 1));
        CHECK(rel_error(y.values(), x.values()) < 1e-15);
    }
    SECTION("gradients") {
        std::mt19937 rng(11);
        auto x = random_tensor<double>({1, 2, 4, 4}, rng);
        auto w = random_tensor<double>({2, 1, 3, 3}, rng);
        auto fx = [&](const Tensor<double>& t) {
            return ops::depthwise_conv2d(t, conv_params(w, {}, 1, 1));
        };
        auto fw = [&](const Tensor<double>& t) {
            return ops::depthwise_conv2d(x, conv_params(t, {}, 1, 1));
        };
        CHECK(check_grad(fx, x) < 1e-4);
        CHECK(check_grad(fw, w) < 1e-4);
    }
    SECTION("weight channel mismatch") {
        CHECK_THROWS_AS(ops::depthwise_conv2d(Tensor<double>::ones({1, 3, 4, 4}),
                                              conv_params(Tensor<double>::ones({2, 1, 3, 3}), {}, 1, 1)),
                        ShapeError);
    }
}

TEST_CASE("batchnorm2d") {
    SECTION("training mode normalizes per channel") {
        std::mt19937 rng(12);
        auto x = random_tensor<double>({2, 3, 4, 4}, rng, -2.0, 5.0);
        ops::BatchNormState<double> s(3);
        auto y = ops::batchnorm2d(x, s, /*training=*/true);
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (int n = 0; n < 2; ++n)
                for (int i = 0; i < 16; ++i)
                    mean += y.values()[static_cast<size_t>((n * 3 + c) * 16 + i)];
            mean /= 32.0;
            for (int n = 0; n < 2; ++n)
                for (int i = 0; i < 16; ++i) {
                    const double d = y.values()[static_cast<size_t>((n * 3 + c) * 16 + i)] - mean;
                    var += d * d;
                }
            var /= 32.0;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-3); // epsilon shrinks the variance slightly
        }
    }
    SECTION("zero input stays zero") {
        ops::BatchNormState<double> s(2);
        auto y = ops::batchnorm2d(Tensor<double>(Shape{1, 2, 2, 2}, 0.0), s, true);
        for (double v : y.values()) CHECK(v == 0.0);
    }
    SECTION("running statistics follow the momentum rule") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}); // mean 2.5, var 1.25
        ops::BatchNormState<double> s(1);
        ops::batchnorm2d(x, s, true);
        CHECK(s.running_mean.values()[0] == Catch::Approx(0.9 * 0.0 + 0.1 * 2.5));
        CHECK(s.running_var.values()[0] == Catch::Approx(0.9 * 1.0 + 0.1 * 1.25));
    }
    SECTION("inference is a deterministic affine map") {
        std::mt19937 rng(13);
        auto x = random_tensor<double>({1, 2, 3, 3}, rng);
        ops::BatchNormState<double> s(2);
        s.running_mean.values() = {0.5, -0.5};
        s.running_var.values() = {4.0, 0.25};
        s.gamma.values() = {2.0, 3.0};
        s.beta.values() = {1.0, -1.0};
        auto y1 = ops::batchnorm2d(x, s, false);
        auto y2 = ops::batchnorm2d(x, s, false);
        CHECK(y1.values() == y2.values());
        const double scale0 = 2.0 / std::sqrt(4.0 + 1e-5);
        CHECK(y1.values()[0] == Catch::Approx((x.values()[0] - 0.5) * scale0 + 1.0));
    }
    SECTION("gradient through training-mode normalization") {
        std::mt19937 rng(14);
        auto x = random_tensor<double>({2, 2, 3, 3}, rng);
        auto run = [&rng](auto f, Tensor<double>& t) {
            // fresh state per evaluation so running-stat updates cannot leak
            return check_grad(f, t);
        };
        ops::BatchNormState<double> s(2);
        s.gamma.values() = {1.3, 0.7};
        s.beta.values() = {0.1, -0.2};
        auto fx = [&](const Tensor<double>& t) {
            ops::BatchNormState<double> local = s;
            return ops::batchnorm2d(t, local, true);
        };
        CHECK(run(fx, x) < 1e-4);

        auto fg = [&](const Tensor<double>& g) {
            ops::BatchNormState<double> local = s;
            local.gamma = g;
            return ops::batchnorm2d(x, local, true);
        };
        CHECK(run(fg, s.gamma) < 1e-4);

        auto fb = [&](const Tensor<double>& b) {
            ops::BatchNormState<double> local = s;
            local.beta = b;
            return ops::batchnorm2d(x, local, true);
        };
        CHECK(run(fb, s.beta) < 1e-4);
    }
    SECTION("single-element channel in training mode is an error") {
        ops::BatchNormState<double> s(1);
        CHECK_THROWS_AS(ops::batchnorm2d(Tensor<double>::ones({1, 1, 1, 1}), s, true), ValueError);
        CHECK_NOTHROW(ops::batchnorm2d(Tensor<double>::ones({1, 1, 1, 1}), s, false));
    }
}

TEST_CASE("activations") {
    SECTION("sigmoid(0) = 0.5, softmax([0,0]) = [0.5,0.5]") {
        CHECK(ops::sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
        auto sm = ops::softmax(Tensor<double>(Shape{2}, {0.0, 0.0}), 0);
        CHECK(sm.values()[0] == Catch::Approx(0.5));
        CHECK(sm.values()[1] == Catch::Approx(0.5));
    }
    SECTION("softmax normalizes along the axis") {
        std::mt19937 rng(15);
        auto x = random_tensor<double>({2, 5, 3, 3}, rng, -30.0, 30.0);
        auto y = ops::softmax(x, 1);
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 9; ++i) {
                double s = 0;
                for (int c = 0; c < 5; ++c)
                    s += y.values()[static_cast<size_t>((n * 5 + c) * 9 + i)];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        CHECK_THROWS_AS(ops::softmax(x, 4), ShapeError);
    }
    SECTION("gradients") {
        std::mt19937 rng(16);
        auto x = random_tensor<double>({2, 3, 2, 2}, rng, 0.2, 2.0); // away from the ReLU kink
        auto fr = [](const Tensor<double>& t) { return ops::relu(t); };
        CHECK(check_grad(fr, x) < 1e-4);
        auto xs = random_tensor<double>({2, 3, 2, 2}, rng, -2.0, 2.0);
        auto fs = [](const Tensor<double>& t) { return ops::sigmoid(t); };
        CHECK(check_grad(fs, xs) < 1e-4);
        // weight the softmax so its gradient is not identically zero
        std::mt19937 rng2(17);
        auto wgt = random_tensor<double>({2, 3, 2, 2}, rng2, 0.1, 1.0);
        auto fm = [&](const Tensor<double>& t) { return mul(ops::softmax(t, 1), wgt); };
        CHECK(check_grad(fm, xs) < 1e-4);
    }
}

TEST_CASE("maxpool2x2") {
    SECTION("window maximum") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        auto y = ops::maxpool2x2(x);
        CHECK(y.values() == std::vector<double>{4});
    }
    SECTION("ties route the gradient to the first window element") {
        Tensor<double> x(Shape{1, 1, 2, 2}, 3.0);
        x.set_requires_grad(true);
        sum(ops::maxpool2x2(x)).backward();
        CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
    }
    SECTION("odd extent is an error") {
        CHECK_THROWS_AS(ops::maxpool2x2(Tensor<double>::ones({1, 1, 3, 4})), ShapeError);
    }
    SECTION("gradient on random input") {
        std::mt19937 rng(18);
        auto x = random_tensor<double>({1, 1, 4, 4}, rng);
        auto f = [](const Tensor<double>& t) { return ops::maxpool2x2(t); };
        CHECK(check_grad(f, x) < 1e-4);
    }
}

TEST_CASE("global average pool") {
    SECTION("mean of [[1,3],[5,7]] is 4") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1, 3, 5, 7});
        CHECK(ops::global_avg_pool(x).values()[0] == Catch::Approx(4.0));
    }
    SECTION("idempotent on 1x1 maps") {
        Tensor<double> x(Shape{2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
        auto y = ops::global_avg_pool(x);
        CHECK(y.values() == x.values());
        CHECK(y.shape() == x.shape());
    }
    SECTION("gradient is 1/(H*W) everywhere") {
        Tensor<double> x(Shape{1, 2, 2, 4}, 1.0);
        x.set_requires_grad(true);
        sum(ops::global_avg_pool(x)).backward();
        for (double g : x.grad()) CHECK(g == Catch::Approx(1.0 / 8.0));
    }
}

namespace {

// Independent scalar implementation of half-pixel-center ×2 interpolation.
double bilinear_ref(const std::vector<double>& src, int H, int W, int oy, int ox) {
    auto sample = [&](double sy, double sx) {
        sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
        sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const int y1 = std::min(y0 + 1, H - 1);
        const int x1 = std::min(x0 + 1, W - 1);
        const double fy = sy - y0, fx = sx - x0;
        return src[static_cast<size_t>(y0 * W + x0)] * (1 - fy) * (1 - fx) +
               src[static_cast<size_t>(y0 * W + x1)] * (1 - fy) * fx +
               src[static_cast<size_t>(y1 * W + x0)] * fy * (1 - fx) +
               src[static_cast<size_t>(y1 * W + x1)] * fy * fx;
    };
    return sample((oy + 0.5) / 2.0 - 0.5, (ox + 0.5) / 2.0 - 0.5);
}

} // namespace

TEST_CASE("bilinear upsample x2") {
    SECTION("constant input gives constant output") {
        auto y = ops::bilinear_upsample_x2(Tensor<double>(Shape{1, 2, 3, 3}, 2.5));
        for (double v : y.values()) CHECK(v == 2.5);
    }
    SECTION("1x1 input clamps to a constant 2x2") {
        Tensor<double> x(Shape{1, 1, 1, 1}, {7.0});
        auto y = ops::bilinear_upsample_x2(x);
        CHECK(y.values() == std::vector<double>(4, 7.0));
    }
    SECTION("2x2 values match the scalar sampling formula") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        auto y = ops::bilinear_upsample_x2(x);
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 4; ++ox)
                CHECK(y.values()[static_cast<size_t>(oy * 4 + ox)] ==
                      Catch::Approx(bilinear_ref(x.values(), 2, 2, oy, ox)));
    }
    SECTION("random input matches the scalar formula and the gradient checks out") {
        std::mt19937 rng(19);
        auto x = random_tensor<double>({1, 1, 3, 5}, rng);
        auto y = ops::bilinear_upsample_x2(x);
        for (int oy = 0; oy < 6; ++oy)
            for (int ox = 0; ox < 10; ++ox)
                CHECK(y.values()[static_cast<size_t>(oy * 10 + ox)] ==
                      Catch::Approx(bilinear_ref(x.values(), 3, 5, oy, ox)));
        auto f = [](const Tensor<double>& t) { return ops::bilinear_upsample_x2(t); };
        CHECK(check_grad(f, x) < 1e-4);
    }
}

TEST_CASE("concat and slice channels") {
    SECTION("slices preserved") {
        Tensor<double> a(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        Tensor<double> b(Shape{1, 2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
        auto c = ops::concat_channels(a, b);
        CHECK(c.shape() == Shape{1, 3, 2, 2});
        CHECK(c.values() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
        auto back = ops::slice_channels(c, 0, 1);
        CHECK(back.values() == a.values());
    }
    SECTION("concat with an empty tensor is the identity") {
        Tensor<double> a(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
        Tensor<double> empty(Shape{1, 0, 2, 2});
        auto c = ops::concat_channels(a, empty);
        CHECK(c.shape() == Shape{1, 2, 2, 2});
        CHECK(c.values() == a.values());
    }
    SECTION("gradient splits along the seam") {
        std::mt19937 rng(20);
        auto a = random_tensor<double>({2, 2, 2, 2}, rng);
        auto b = random_tensor<double>({2, 1, 2, 2}, rng);
        auto wgt = random_tensor<double>({2, 3, 2, 2}, rng);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        sum(mul(ops::concat_channels(a, b), wgt)).backward();
        // gradient of a equals the first-channel slice of the upstream weight
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 8; ++i)
                CHECK(a.grad()[static_cast<size_t>(n * 8 + i)] ==
                      wgt.values()[static_cast<size_t>(n * 12 + i)]);
        CHECK_THROWS_AS(ops::concat_channels(a, Tensor<double>::ones({2, 1, 3, 2})), ShapeError);
    }
    SECTION("batch mismatch is an error") {
        CHECK_THROWS_AS(
            ops::concat_channels(Tensor<double>::ones({1, 1, 2, 2}), Tensor<double>::ones({2, 1, 2, 2})),
            ShapeError);
    }
}

TEST_CASE("reshape keeps values and gradients") {
    std::mt19937 rng(21);
    auto x = random_tensor<double>({2, 6}, rng);
    auto y = ops::reshape(x, {2, 2, 3});
    CHECK(y.values() == x.values());
    CHECK_THROWS_AS(ops::reshape(x, {5}), ShapeError);
    auto f = [](const Tensor<double>& t) { return ops::reshape(mul(t, t), {12}); };
    CHECK(check_grad(f, x) < 1e-4);
}
