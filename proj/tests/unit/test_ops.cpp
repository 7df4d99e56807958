#include "doctest.h"

#include <cmath>

#include "amber/ops.hpp"
#include "amber/rng.hpp"

using namespace amber;

namespace {

Tensor<double> randn(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

// direct seven-loop convolution over x[B,Ci,D,H,W], w[Co,Ci,kd,kh,kw]
std::vector<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                                 const ConvSpec& s) {
    const auto B = x.dim(0), Ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4), Co = w.dim(0);
    const auto Do = (D + 2 * s.padding[0] - s.kernel[0]) / s.stride[0] + 1;
    const auto Ho = (H + 2 * s.padding[1] - s.kernel[1]) / s.stride[1] + 1;
    const auto Wo = (W + 2 * s.padding[2] - s.kernel[2]) / s.stride[2] + 1;
    auto xd = x.data();
    auto wd = w.data();
    std::vector<double> out;
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t o = 0; o < Co; ++o)
            for (std::int64_t z = 0; z < Do; ++z)
                for (std::int64_t y = 0; y < Ho; ++y)
                    for (std::int64_t q = 0; q < Wo; ++q) {
                        double acc = b.data()[o];
                        for (std::int64_t c = 0; c < Ci; ++c)
                            for (std::int64_t a = 0; a < s.kernel[0]; ++a)
                                for (std::int64_t e = 0; e < s.kernel[1]; ++e)
                                    for (std::int64_t f = 0; f < s.kernel[2]; ++f) {
                                        const auto zi = z * s.stride[0] - s.padding[0] + a;
                                        const auto yi = y * s.stride[1] - s.padding[1] + e;
                                        const auto xi = q * s.stride[2] - s.padding[2] + f;
                                        if (zi < 0 || zi >= D || yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
                                        acc += xd[(((n * Ci + c) * D + zi) * H + yi) * W + xi] *
                                               wd[(((o * Ci + c) * s.kernel[0] + a) * s.kernel[1] + e) * s.kernel[2] + f];
                                    }
                        out.push_back(acc);
                    }
    return out;
}

void check_close(std::span<const double> a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("conv3d output shapes") {
    Tensor<float> x(Shape{1, 1, 16, 32, 32});
    Tensor<float> w1(Shape{8, 1, 3, 3, 3}), b1(Shape{8});
    CHECK(conv3d(x, w1, b1, ConvSpec::cube(3, 1, 1, 1, 8)).shape() == Shape{1, 8, 16, 32, 32});
    Tensor<float> w2(Shape{8, 1, 3, 3, 3});
    CHECK(conv3d(x, w2, b1, ConvSpec::cube(3, 2, 1, 1, 8)).shape() == Shape{1, 8, 8, 16, 16});
}

TEST_CASE("conv3d sums a cube of ones to 27") {
    auto x = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
    auto w = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
    Tensor<double> b(Shape{1});
    auto y = conv3d(x, w, b, ConvSpec::cube(3, 1, 0, 1, 1));
    CHECK(y.shape() == Shape{1, 1, 1, 1, 1});
    CHECK(y.data()[0] == 27.0);
}

TEST_CASE("conv3d matches a direct loop") {
    Rng rng(21);
    for (auto spec : {ConvSpec::cube(3, 1, 1, 2, 3), ConvSpec::cube(3, 2, 1, 2, 3), ConvSpec::cube(2, 2, 0, 2, 3),
                      ConvSpec{{4, 1, 1}, {1, 1, 1}, {0, 0, 0}, 2, 3}}) {
        auto x = randn({2, 2, 5, 6, 7}, rng);
        auto w = randn({3, 2, spec.kernel[0], spec.kernel[1], spec.kernel[2]}, rng);
        auto b = randn({3}, rng);
        check_close(conv3d(x, w, b, spec).data(), naive_conv3d(x, w, b, spec), 1e-12);
    }
}

TEST_CASE("conv3d rejects an empty output extent") {
    Tensor<float> x(Shape{1, 1, 2, 8, 8});
    Tensor<float> w(Shape{1, 1, 3, 3, 3}), b(Shape{1});
    CHECK_THROWS_AS(conv3d(x, w, b, ConvSpec::cube(3, 1, 0, 1, 1)), ShapeError);
}

TEST_CASE("conv2d identity and pointwise cases") {
    Rng rng(22);
    auto x = randn({1, 2, 5, 4}, rng);
    Tensor<double> w(Shape{2, 2, 1, 1}, {1, 0, 0, 1});
    Tensor<double> b(Shape{2});
    auto y = conv2d(x, w, b, ConvSpec::planar(1, 1, 0, 2, 2));
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));

    Tensor<float> x3(Shape{1, 3, 32, 32});
    Tensor<float> w3(Shape{4, 3, 1, 1}), b3(Shape{4});
    CHECK(conv2d(x3, w3, b3, ConvSpec::planar(1, 1, 0, 3, 4)).shape() == Shape{1, 4, 32, 32});
}

TEST_CASE("conv2d agrees with conv3d at depth one") {
    Rng rng(23);
    auto x = randn({2, 3, 6, 5}, rng);
    auto w = randn({2, 3, 3, 3}, rng);
    auto b = randn({2}, rng);
    auto y = conv2d(x, w, b, ConvSpec::planar(3, 1, 1, 3, 2));
    auto y3 = naive_conv3d(reshape(x, Shape{2, 3, 1, 6, 5}), reshape(w, Shape{2, 3, 1, 3, 3}), b,
                           ConvSpec{{1, 3, 3}, {1, 1, 1}, {0, 1, 1}, 3, 2});
    check_close(y.data(), y3, 1e-12);
}

TEST_CASE("linear identity and shape mismatch") {
    Rng rng(24);
    auto x = randn({3, 2}, rng);
    Tensor<double> w(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<double> b(Shape{2});
    auto y = linear(x, w, b);
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
    Tensor<double> bad(Shape{3, 2});
    CHECK_THROWS_AS(linear(x, bad, b), ShapeError);
}

TEST_CASE("bmm matches a triple loop") {
    Rng rng(25);
    auto a = randn({2, 3, 4}, rng);
    auto b = randn({2, 4, 5}, rng);
    auto bt = permute(b, {0, 2, 1});
    std::vector<double> ref;
    for (int g = 0; g < 2; ++g)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) {
                double s = 0;
                for (int k = 0; k < 4; ++k) s += a.data()[(g * 3 + i) * 4 + k] * b.data()[(g * 4 + k) * 5 + j];
                ref.push_back(s);
            }
    check_close(bmm(a, b).data(), ref, 1e-12);
    check_close(bmm(a, bt, true).data(), ref, 1e-12);
}

TEST_CASE("layer norm") {
    auto c = Tensor<double>::full({2, 3, 8}, 4.0);
    auto g = Tensor<double>::full({8}, 1.0);
    Tensor<double> z(Shape{8});
    const auto zeros = layer_norm(c, g, z);
    for (double v : zeros.data()) CHECK(v == 0.0);

    Rng rng(26);
    auto x = randn({5, 16}, rng);
    auto y = layer_norm(x, Tensor<double>::full({16}, 1.0), Tensor<double>(Shape{16}));
    for (int r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (int i = 0; i < 16; ++i) m += y.data()[r * 16 + i];
        m /= 16;
        for (int i = 0; i < 16; ++i) v += (y.data()[r * 16 + i] - m) * (y.data()[r * 16 + i] - m);
        v /= 16;
        CHECK(std::abs(m) < 1e-6);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }
}

TEST_CASE("gelu reference values") {
    Tensor<double> x(Shape{3}, {0.0, 1.0, -1.0});
    auto y = gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(y.data()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
}

TEST_CASE("softmax") {
    auto u = Tensor<double>::full({2, 7}, 3.0);
    const auto su = softmax(u, -1);
    for (double v : su.data()) CHECK(v == doctest::Approx(1.0 / 7).epsilon(1e-15));

    Rng rng(27);
    auto x = Tensor<double>(Shape{6, 9});
    for (auto& v : x.data()) v = rng.uniform(-50, 50);
    auto y = softmax(x, -1);
    for (int r = 0; r < 6; ++r) {
        double s = 0;
        for (int i = 0; i < 9; ++i) s += y.data()[r * 9 + i];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    auto shifted = x.detach();
    for (auto& v : shifted.data()) v += 10.0;
    auto ys = softmax(shifted, -1);
    for (std::size_t i = 0; i < 54; ++i) CHECK(std::abs(ys.data()[i] - y.data()[i]) < 1e-12);

    auto yf = softmax(Tensor<float>(Shape{4, 3}, std::vector<float>(12, 50.0f)), 0);
    for (float v : yf.data()) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("trilinear upsampling") {
    Rng rng(28);
    auto x = randn({1, 2, 3, 4, 5}, rng);
    auto same = upsample_trilinear(x, Extents3{3, 4, 5});
    CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

    auto c = Tensor<double>::full({1, 1, 2, 2, 2}, 1.5);
    const auto cu = upsample_trilinear(c, Extents3{4, 4, 4});
    for (double v : cu.data()) CHECK(v == doctest::Approx(1.5).epsilon(1e-15));

    // ramp f(w) = 3w + 1 on 4 samples, 2x: half-pixel centers map output j to
    // source (j + 0.5)/2 - 0.5, clamped to the first and last sample
    Tensor<double> ramp(Shape{1, 1, 1, 1, 4}, {1, 4, 7, 10});
    auto up = upsample_trilinear(ramp, Extents3{1, 1, 8});
    for (int j = 0; j < 8; ++j) {
        const double src = std::clamp((j + 0.5) / 2.0 - 0.5, 0.0, 3.0);
        CHECK(std::abs(up.data()[j] - (3 * src + 1)) < 1e-6);
    }
}

TEST_CASE("bilinear upsampling on a ramp") {
    Tensor<double> ramp(Shape{1, 1, 3, 1}, {2, 4, 6});
    auto up = upsample_bilinear(ramp, 6, 2);
    for (int j = 0; j < 6; ++j) {
        const double src = std::clamp((j + 0.5) / 2.0 - 0.5, 0.0, 2.0);
        CHECK(std::abs(up.data()[j * 2] - (2 * src + 2)) < 1e-6);
        CHECK(up.data()[j * 2] == up.data()[j * 2 + 1]);
    }
}

TEST_CASE("depthwise conv matches a per-channel loop") {
    Rng rng(29);
    const Extents3 g{3, 4, 5};
    const std::int64_t C = 2;
    auto x = randn({1, g.count(), C}, rng);
    auto w = randn({3, 3, 3, C}, rng);
    auto b = randn({C}, rng);
    auto y = depthwise_conv3d(x, g, w, b);
    std::vector<double> ref;
    for (std::int64_t z = 0; z < g.d; ++z)
        for (std::int64_t r = 0; r < g.h; ++r)
            for (std::int64_t q = 0; q < g.w; ++q)
                for (std::int64_t c = 0; c < C; ++c) {
                    double acc = b.data()[c];
                    for (int a = -1; a <= 1; ++a)
                        for (int e = -1; e <= 1; ++e)
                            for (int f = -1; f <= 1; ++f) {
                                const auto zi = z + a, ri = r + e, qi = q + f;
                                if (zi < 0 || zi >= g.d || ri < 0 || ri >= g.h || qi < 0 || qi >= g.w) continue;
                                acc += x.data()[((zi * g.h + ri) * g.w + qi) * C + c] *
                                       w.data()[(((a + 1) * 3 + (e + 1)) * 3 + (f + 1)) * C + c];
                            }
                    ref.push_back(acc);
                }
    check_close(y.data(), ref, 1e-12);
}

TEST_CASE("attention matches explicit softmax") {
    Rng rng(30);
    auto q = randn({2, 5, 3}, rng);
    auto k = randn({2, 4, 3}, rng);
    auto v = randn({2, 4, 2}, rng);
    const double s = 0.6;
    auto p = softmax(scale(bmm(q, k, true), s), -1);
    auto ref = bmm(p, v);
    auto y = attention(q, k, v, s);
    check_close(y.data(), std::vector<double>(ref.data().begin(), ref.data().end()), 1e-12);
    auto w = attention_weights(q, k, s);
    check_close(w.data(), std::vector<double>(p.data().begin(), p.data().end()), 1e-12);
}

TEST_CASE("structural ops") {
    Rng rng(31);
    auto x = randn({2, 3, 4}, rng);
    auto p = permute(x, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    CHECK(p.data()[(3 * 2 + 1) * 3 + 2] == x.data()[(1 * 3 + 2) * 4 + 3]);
    auto c = concat(std::vector<Tensor<double>>{x, x}, 1);
    CHECK(c.shape() == Shape{2, 6, 4});
    auto padded = pad_tokens(x, 5);
    CHECK(padded.shape() == Shape{2, 5, 4});
    for (int i = 0; i < 4; ++i) CHECK(padded.data()[(0 * 5 + 4) * 4 + i] == 0.0);
    CHECK_THROWS_AS(reshape(x, Shape{5, 5}), ShapeError);
}
