#include "doctest.h"

#include <numeric>

#include "amber/encoder.hpp"
#include "amber/model.hpp"
#include "oracles.hpp"

using namespace amber;

namespace {

Tensor<double> randn(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

// gives every zero-initialized bias a random value so the oracle sees them
void randomize_biases(EfficientSelfAttention<double>& a, Rng& rng) {
    for (auto* l : {&a.query, &a.key, &a.value, &a.proj})
        for (auto& v : l->bias.data()) v = 0.1 * rng.normal();
}

oracle::AttentionWeights weights_of(const EfficientSelfAttention<double>& a) {
    return {a.query.weight.data(), a.query.bias.data(), a.key.weight.data(), a.key.bias.data(),
            a.value.weight.data(), a.value.bias.data(), a.proj.weight.data(), a.proj.bias.data()};
}

StageConfig stage(std::int64_t stride, std::int64_t channels) {
    StageConfig s;
    s.stride = {stride, stride, stride};
    s.channels = channels;
    s.heads = 1;
    s.reduction = 1;
    s.blocks = 1;
    return s;
}

}  // namespace

TEST_CASE("patch merging extents") {
    Rng rng(41);
    Extents3 g;
    EncoderStage<float> s1(stage(1, 8), 1, 4, rng);
    auto t1 = s1.patch_merge(Tensor<float>(Shape{1, 1, 16, 32, 32}), g);
    CHECK(g == Extents3{16, 32, 32});
    CHECK(t1.shape() == Shape{1, 16 * 32 * 32, 8});

    EncoderStage<float> s2(stage(2, 16), 8, 4, rng);
    auto t2 = s2.patch_merge(Tensor<float>(Shape{1, 8, 16, 32, 32}), g);
    CHECK(g == Extents3{8, 16, 16});
    CHECK(t2.shape() == Shape{1, 8 * 16 * 16, 16});
}

TEST_CASE("efficient attention shapes and reduction length") {
    Rng rng(42);
    EfficientSelfAttention<double> a(8, 2, 4, rng);
    auto x = randn({1, 64, 8}, rng);
    CHECK(a(x).shape() == Shape{1, 64, 8});
    CHECK(a.kv_length(64) == 16);
    CHECK(a.reduce(x).shape() == Shape{1, 16, 8});
    CHECK(a.weights(x).shape() == Shape{2, 64, 16});

    EfficientSelfAttention<double> a8(8, 2, 8, rng);
    CHECK(a8.kv_length(64) == a.kv_length(64) / 2);
    CHECK(a8.reduce(x).shape() == Shape{1, 8, 8});
}

TEST_CASE("attention rows sum to one for every head") {
    Rng rng(43);
    for (std::int64_t r : {1, 4}) {
        EfficientSelfAttention<double> a(8, 2, r, rng);
        auto w = a.weights(randn({2, 32, 8}, rng));
        const auto M = w.dim(2);
        for (std::int64_t row = 0; row < w.dim(0) * w.dim(1); ++row) {
            double s = 0;
            for (std::int64_t j = 0; j < M; ++j) s += w.data()[row * M + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("non-divisible sequences are padded for the reduction") {
    Rng rng(44);
    EfficientSelfAttention<double> a(4, 1, 4, rng);
    auto x = randn({1, 10, 4}, rng);
    CHECK(a.kv_length(10) == 3);
    CHECK(a(x).shape() == Shape{1, 10, 4});
}

TEST_CASE("R=1 attention equals unreduced multi-head attention") {
    Rng rng(45);
    EfficientSelfAttention<double> a(8, 2, 1, rng);
    randomize_biases(a, rng);
    auto x = randn({2, 20, 8}, rng);
    auto y = a(x);
    for (std::int64_t b = 0; b < 2; ++b) {
        auto ref = oracle::full_attention(x.data().subspan(b * 160, 160), weights_of(a), 20, 8, 2);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.data()[b * 160 + i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("R=1 attention is permutation equivariant") {
    Rng rng(46);
    const std::int64_t N = 24, C = 8;
    EfficientSelfAttention<double> a(C, 2, 1, rng);
    randomize_biases(a, rng);
    auto x = randn({1, N, C}, rng);
    std::vector<std::int64_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor<double> xp(Shape{1, N, C});
    for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t c = 0; c < C; ++c) xp.data()[i * C + c] = x.data()[perm[i] * C + c];
    auto y = a(x);
    auto yp = a(xp);
    for (std::int64_t i = 0; i < N; ++i)
        for (std::int64_t c = 0; c < C; ++c) CHECK(std::abs(yp.data()[i * C + c] - y.data()[perm[i] * C + c]) < 1e-5);
}

TEST_CASE("mix-ffn with a zeroed output layer is the identity") {
    Rng rng(47);
    MixFfn<float> f(8, 4, rng);
    CHECK(f.hidden_channels() == 32);
    Tensor<float> x(Shape{1, 64, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    CHECK(f(x, Extents3{4, 4, 4}).shape() == Shape{1, 64, 8});
    for (auto& v : f.fc2.weight.data()) v = 0;
    for (auto& v : f.fc2.bias.data()) v = 0;
    auto y = f(x, Extents3{4, 4, 4});
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
}

TEST_CASE("stage extents for both stride schedules") {
    const auto pres = ModelConfig::standard(16, 4, StrideSchedule::preserving).stage_extents();
    CHECK(pres == std::vector<Extents3>{{16, 32, 32}, {8, 16, 16}, {4, 8, 8}, {2, 4, 4}});
    const auto classic = ModelConfig::standard(16, 4, StrideSchedule::classic).stage_extents();
    CHECK(classic == std::vector<Extents3>{{8, 16, 16}, {4, 8, 8}, {2, 4, 4}, {1, 2, 2}});
}

TEST_CASE("encoder pyramid matches the configured extents and channels") {
    const auto cfg = ModelConfig::tiny(16, 3);
    Rng rng(48);
    Encoder<float> enc(cfg.encoder, rng);
    Tensor<float> x(Shape{1, 1, 16, 32, 32});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    NoGradGuard g;
    auto p = enc(x);
    const auto ext = cfg.stage_extents();
    REQUIRE(p.features.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(p.extents[i] == ext[i]);
        CHECK(p.features[i].shape() ==
              Shape{1, cfg.encoder.stages[i].channels, ext[i].d, ext[i].h, ext[i].w});
        CHECK(p.tokens[i].shape() == Shape{1, ext[i].count(), cfg.encoder.stages[i].channels});
    }
}

TEST_CASE("encoder config validation") {
    auto cfg = EncoderConfig::standard(StrideSchedule::preserving);
    cfg.stages[1].heads = 3;  // 64 channels are not divisible by 3 heads
    CHECK_THROWS(cfg.validate());
}
