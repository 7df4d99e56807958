#include "doctest.h"

#include "amber/decoder.hpp"
#include "amber/model.hpp"

using namespace amber;

namespace {

const std::vector<Extents3> kExtents{{16, 32, 32}, {8, 16, 16}, {4, 8, 8}, {2, 4, 4}};

Tensor<double> randn(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("unify maps every stage to the decoder width") {
    Rng rng(61);
    const std::vector<std::int64_t> ch{4, 8, 12, 8};
    Decoder<double> dec(DecoderConfig{8, 3, 2}, ch, rng);
    FeaturePyramid<double> p;
    const std::vector<Extents3> ext{{2, 8, 8}, {1, 4, 4}, {1, 2, 2}, {1, 1, 1}};
    for (std::size_t i = 0; i < 4; ++i) {
        p.tokens.push_back(randn({1, ext[i].count(), ch[i]}, rng));
        p.extents.push_back(ext[i]);
    }
    // stage 4 already has C_dec channels: an identity map leaves it unchanged
    auto& last = dec.unify_layers[3];
    for (std::int64_t r = 0; r < 8; ++r)
        for (std::int64_t c = 0; c < 8; ++c) last.weight.data()[r * 8 + c] = r == c ? 1.0 : 0.0;
    auto grids = dec.unify(p);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(grids[i].shape() == Shape{1, 8, ext[i].d, ext[i].h, ext[i].w});
    for (std::int64_t c = 0; c < 8; ++c) CHECK(grids[3].data()[c] == p.tokens[3].data()[c]);
}

TEST_CASE("upsample and concatenate") {
    Rng rng(62);
    Decoder<float> dec(DecoderConfig{8, 4, 16}, {4, 8, 12, 16}, rng);
    std::vector<Tensor<float>> grids;
    for (const auto& e : kExtents) grids.push_back(Tensor<float>::full({2, 8, e.d, e.h, e.w}, 0.75f));
    auto cat = dec.upsample_concat(grids);
    CHECK(cat.shape() == Shape{2, 32, 16, 32, 32});
    for (float v : cat.data()) CHECK(v == doctest::Approx(0.75f).epsilon(1e-6));
}

TEST_CASE("fuse with zero weights gives zeros before normalization") {
    Rng rng(63);
    Decoder<double> dec(DecoderConfig{4, 2, 2}, {2, 2}, rng);
    for (auto& v : dec.fuse_layer.weight.data()) v = 0;
    for (auto& v : dec.fuse_layer.bias.data()) v = 0;
    auto y = dec.fuse(randn({1, 8, 2, 3, 3}, rng), false);
    CHECK(y.shape() == Shape{1, 4, 2, 3, 3});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("funnel with an averaging kernel is the spectral mean") {
    Rng rng(64);
    const std::int64_t D = 16, C = 8;
    Decoder<double> dec(DecoderConfig{C, 4, D}, {4, 8, 12, 16}, rng);
    CHECK(dec.funnel.weight.shape() == Shape{C, C, D, 1, 1});
    auto w = dec.funnel.weight.data();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t d = 0; d < D; ++d) w[(c * C + c) * D + d] = 1.0 / D;
    auto x = randn({1, C, D, 32, 32}, rng);
    auto y = dec.funnelize(x);
    REQUIRE(y.shape() == Shape{1, C, 32, 32});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t p = 0; p < 32 * 32; ++p) {
            double m = 0;
            for (std::int64_t d = 0; d < D; ++d) m += x.data()[(c * D + d) * 1024 + p];
            CHECK(std::abs(y.data()[c * 1024 + p] - m / D) < 1e-6);
        }
    CHECK_THROWS_AS(dec.funnelize(randn({1, C, 8, 4, 4}, rng)), ShapeError);
}

TEST_CASE("classify shapes") {
    Rng rng(65);
    Decoder<float> dec(DecoderConfig{8, 4, 16}, {4, 8, 12, 16}, rng);
    CHECK(dec.classify(Tensor<float>(Shape{1, 8, 32, 32}), 32, 32).shape() == Shape{1, 4, 32, 32});
    CHECK(dec.classify(Tensor<float>(Shape{1, 8, 16, 16}), 32, 32).shape() == Shape{1, 4, 32, 32});
}

TEST_CASE("end-to-end logits for both schedules") {
    for (auto s : {StrideSchedule::preserving, StrideSchedule::classic}) {
        const auto cfg = ModelConfig::tiny(16, 5, s);
        AmberModel<float> m(cfg, 3);
        CHECK(m.decoder.config().funnel_depth == cfg.stage_extents()[0].d);
        auto y = m.infer(Tensor<float>(Shape{2, 1, 16, 32, 32}), 2);
        CHECK(y.shape() == Shape{2, 5, 32, 32});
    }
}

TEST_CASE("every parameter receives a gradient") {
    const auto cfg = ModelConfig::tiny(8, 3);
    AmberModel<double> m(cfg, 4);
    Rng rng(66);
    auto x = randn({1, 1, 8, 32, 32}, rng);
    auto y = m(x);
    auto r = randn(y.shape(), rng);
    sum(mul(y, r)).backward();
    std::int64_t zero = 0;
    const auto params = m.parameters();
    for (const auto& [name, p] : params) {
        CAPTURE(name);
        CHECK(p.has_grad());
        bool all_zero = true;
        for (double g : p.grad()) all_zero = all_zero && g == 0.0;
        zero += all_zero;
    }
    CHECK(static_cast<double>(zero) / static_cast<double>(params.size()) < 0.5);
}
