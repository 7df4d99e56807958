#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "amber/training.hpp"

using namespace amber;
namespace fs = std::filesystem;

namespace {

Tensor<double> randn(Shape s, Rng& rng, bool grad = false) {
    Tensor<double> t(std::move(s), grad);
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

struct Toy {
    HyperCube cube;
    LabelMap labels;
    PatchSet ps;
};

// small normalized synthetic scene with a fixed split
Toy toy(std::uint64_t seed, std::int64_t patches = 16) {
    auto scene = generate_synthetic_scene(3, 8, 48, 48, seed, 0.05);
    Toy t{std::move(scene.cube), std::move(scene.labels), {}};
    t.ps = split_patches(sample_patches(t.labels, patches, seed), 0.5, seed + 1);
    train_band_stats(t.cube, t.ps).apply(t.cube);
    return t;
}

}  // namespace

TEST_CASE("masked cross entropy reference cases") {
    Tensor<double> logits(Shape{1, 4, 2, 2});
    const std::vector<std::uint16_t> none(4, 0);
    auto z = masked_cross_entropy(logits, none);
    CHECK(z.item() == 0.0);

    const std::vector<std::uint16_t> one{0, 3, 0, 0};
    CHECK(masked_cross_entropy(logits, one).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    const std::vector<std::uint16_t> bad{0, 5, 0, 0};
    CHECK_THROWS(masked_cross_entropy(logits, bad));
}

TEST_CASE("masked cross entropy matches a per-pixel loop") {
    Rng rng(81);
    auto logits = randn({2, 3, 4, 5}, rng);
    std::vector<std::uint16_t> labels(40);
    for (auto& v : labels) v = static_cast<std::uint16_t>(rng.below(4));
    double total = 0;
    int defined = 0;
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 20; ++p) {
            const auto y = labels[b * 20 + p];
            if (y == 0) continue;
            double mx = -1e300, z = 0;
            for (int k = 0; k < 3; ++k) mx = std::max(mx, logits.data()[(b * 3 + k) * 20 + p]);
            for (int k = 0; k < 3; ++k) z += std::exp(logits.data()[(b * 3 + k) * 20 + p] - mx);
            total += -(logits.data()[(b * 3 + y - 1) * 20 + p] - mx - std::log(z));
            ++defined;
        }
    CHECK(masked_cross_entropy(logits, labels).item() == doctest::Approx(total / defined).epsilon(1e-12));
}

TEST_CASE("logits at undefined pixels do not affect the loss") {
    Rng rng(82);
    for (int trial = 0; trial < 200; ++trial) {
        auto logits = randn({1, 3, 4, 4}, rng).cast<float>();
        std::vector<std::uint16_t> labels(16);
        for (auto& v : labels) v = static_cast<std::uint16_t>(rng.below(4));
        const float before = masked_cross_entropy(logits, labels).item();
        auto changed = logits.detach();
        for (int k = 0; k < 3; ++k)
            for (int p = 0; p < 16; ++p)
                if (labels[p] == 0) changed.data()[k * 16 + p] += static_cast<float>(100 * rng.normal());
        CHECK(std::abs(masked_cross_entropy(changed, labels).item() - before) < 1e-7);
    }
}

TEST_CASE("sgd step arithmetic") {
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> g{0.5, -1.0};
    sgd_step<double>(p, g, 0.01);
    CHECK(p[0] == doctest::Approx(0.995).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(2.01).epsilon(1e-15));
    auto before = p;
    sgd_step<double>(p, g, 0.0);
    CHECK(p == before);
}

TEST_CASE("sgd decreases a quadratic") {
    Rng rng(83);
    auto w = randn({5}, rng, true);
    NamedParams<double> params{{"w", w}};
    Sgd<double> opt(0.1);
    double last = 1e300;
    for (int i = 0; i < 20; ++i) {
        Sgd<double>::zero_grad(params);
        auto loss = sum(mul(w, w));
        CHECK(loss.item() < last);
        last = loss.item();
        loss.backward();
        opt.step(params);
    }
}

TEST_CASE("training config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.learning_rate = -1;
    CHECK_THROWS(c.validate());
}

TEST_CASE("training is deterministic and lowers the loss") {
    const auto t = toy(5);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 5;
    const auto cfg = ModelConfig::tiny(8, 3);
    AmberModel<float> a(cfg, 11), b(cfg, 11);
    const auto ha = train(tc, a, t.cube, t.labels, t.ps);
    const auto hb = train(tc, b, t.cube, t.labels, t.ps);
    CHECK(ha == hb);
    REQUIRE(ha.size() == 3);
    CHECK(ha.back() < ha.front());
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
}

TEST_CASE("one SGD step on a fixed batch lowers the loss") {
    const auto t = toy(6);
    const auto cfg = ModelConfig::tiny(8, 3);
    AmberModel<float> m(cfg, 12);
    const auto train_patches = t.ps.of(Split::train);
    const auto batch = make_batch(t.cube, t.labels, std::span(train_patches).first(4), 32, nullptr);
    CHECK(batch.x.shape() == Shape{4, 1, 8, 32, 32});
    CHECK(batch.labels.size() == 4 * 32 * 32);
    const auto params = m.parameters();
    Sgd<float> opt(0.01);
    Sgd<float>::zero_grad(params);
    auto loss = masked_cross_entropy(m(batch.x), batch.labels);
    const float before = loss.item();
    loss.backward();
    opt.step(params);
    float after;
    {
        NoGradGuard g;
        after = masked_cross_entropy(m(batch.x), batch.labels).item();
    }
    CHECK(after < before);
}

TEST_CASE("argmax ties go to the lowest class") {
    Tensor<float> logits(Shape{1, 3, 1, 2}, {1, 5, 1, 5, 0, 5});
    CHECK(argmax_classes(logits) == std::vector<std::uint16_t>{1, 1});
}

TEST_CASE("checkpoint round trip reproduces predictions bitwise") {
    const auto t = toy(7);
    const auto cfg = ModelConfig::tiny(8, 3);
    Checkpoint ck{AmberModel<float>(cfg, 13), train_band_stats(t.cube, t.ps), {0.5, 0.25}, {{"name", "unit"}}};
    const auto dir = fs::temp_directory_path() / "amber_ckpt_test";
    fs::remove_all(dir);
    save_checkpoint(ck, dir);
    const auto back = load_checkpoint(dir);
    CHECK(back.loss_history == ck.loss_history);
    CHECK(back.stats.mean == ck.stats.mean);
    CHECK(back.config == ck.config);
    const auto patches = t.ps.of(Split::test);
    const auto batch = make_batch(t.cube, t.labels, std::span(patches).first(2), 32, nullptr);
    const auto y1 = ck.model.infer(batch.x, 2);
    const auto y2 = back.model.infer(batch.x, 2);
    CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));

    fs::resize_file(dir / "model.params.raw", fs::file_size(dir / "model.params.raw") - 4);
    CHECK_THROWS(load_checkpoint(dir));
    fs::remove_all(dir);
}

TEST_CASE("full-scene prediction covers the image with valid classes") {
    auto scene = generate_synthetic_scene(3, 8, 40, 50, 8, 0.05);
    const auto cfg = ModelConfig::tiny(8, 3);
    PatchSet ps;
    ps.patches = {{20, 20, Split::train}};
    Checkpoint ck{AmberModel<float>(cfg, 14), train_band_stats(scene.cube, ps), {}, {}};
    const auto map = predict_full(ck, scene.cube, 2);
    CHECK(map.height == 40);
    CHECK(map.width == 50);
    for (auto v : map.labels) {
        CHECK(v >= 1);
        CHECK(v <= 3);
    }
}
