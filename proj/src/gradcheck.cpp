#include "amber/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "amber/encoder.hpp"
#include "amber/model.hpp"
#include "amber/ops.hpp"
#include "amber/rng.hpp"
#include "amber/training.hpp"

namespace amber {

namespace {

// gradients that vanish identically (a key bias under softmax) leave only
// rounding noise on both sides; below this norm the error is absolute
constexpr double kNormFloor = 1e-6;

double weighted_sum(const Tensor<double>& y, const std::vector<double>& r) {
    auto d = y.data();
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * r[i];
    return s;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, bool grad = true, double scale = 1.0) {
    Tensor<double> t(std::move(shape), grad);
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

}  // namespace

double gradient_error(const GradFn& f, const std::vector<Tensor<double>>& inputs, std::uint64_t seed,
                      const GradcheckOptions& opt) {
    Rng rng(seed);
    std::vector<double> r;
    {
        auto y = f(inputs);
        r.resize(static_cast<std::size_t>(y.numel()));
        for (auto& v : r) v = rng.normal();
        for (auto t : inputs) t.zero_grad();
        Tensor<double> rt(y.shape(), r);
        sum(mul(y, rt)).backward();
    }

    double worst = 0;
    for (auto x : inputs) {
        const auto n = x.numel();
        std::vector<std::int64_t> coords;
        if (opt.max_coords > 0 && n > opt.max_coords) {
            std::vector<std::int64_t> all(n);
            for (std::int64_t i = 0; i < n; ++i) all[i] = i;
            for (std::int64_t i = 0; i < opt.max_coords; ++i) {
                const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
                std::swap(all[i], all[j]);
            }
            coords.assign(all.begin(), all.begin() + opt.max_coords);
        } else {
            for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
        }
        std::vector<double> analytic(coords.size(), 0.0);
        if (x.has_grad()) {
            auto g = x.grad();
            for (std::size_t k = 0; k < coords.size(); ++k) analytic[k] = g[coords[k]];
        }
        double diff2 = 0, a2 = 0, n2 = 0;
        NoGradGuard guard;
        auto data = x.data();
        for (std::size_t k = 0; k < coords.size(); ++k) {
            const auto i = coords[k];
            const double saved = data[i];
            data[i] = saved + opt.step;
            const double up = weighted_sum(f(inputs), r);
            data[i] = saved - opt.step;
            const double down = weighted_sum(f(inputs), r);
            data[i] = saved;
            const double numeric = (up - down) / (2 * opt.step);
            diff2 += (analytic[k] - numeric) * (analytic[k] - numeric);
            a2 += analytic[k] * analytic[k];
            n2 += numeric * numeric;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), kNormFloor});
        worst = std::max(worst, std::sqrt(diff2) / denom);
    }
    return worst;
}

bool GradcheckReport::pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.pass(); });
}

GradcheckReport run_gradcheck(std::uint64_t seed, double op_tolerance, double model_tolerance) {
    using V = std::vector<Tensor<double>>;
    GradcheckReport report;
    Rng rng(seed);
    std::uint64_t k = 0;
    auto op = [&](const std::string& name, const GradFn& f, const V& inputs) {
        report.entries.push_back({name, false, gradient_error(f, inputs, derive_seed(seed, 100 + k++)), op_tolerance});
    };
    auto composite = [&](const std::string& name, const GradFn& f, const V& inputs) {
        report.entries.push_back({name, true, gradient_error(f, inputs, derive_seed(seed, 100 + k++)), model_tolerance});
    };

    op("add", [](const V& x) { return add(x[0], x[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    op("sub", [](const V& x) { return sub(x[0], x[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    op("mul", [](const V& x) { return mul(x[0], x[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    op("scale", [](const V& x) { return scale(x[0], 0.7); }, {random_tensor({3, 4}, rng)});
    op("sum", [](const V& x) { return sum(x[0]); }, {random_tensor({3, 4}, rng)});
    op("mean", [](const V& x) { return mean(x[0]); }, {random_tensor({3, 4}, rng)});
    op("reshape", [](const V& x) { return reshape(x[0], Shape{6, 4}); }, {random_tensor({2, 3, 4}, rng)});
    op("permute", [](const V& x) { return permute(x[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, rng)});
    op("concat", [](const V& x) { return concat(V{x[0], x[1]}, 1); },
       {random_tensor({2, 3, 4}, rng), random_tensor({2, 2, 4}, rng)});
    op("pad_tokens", [](const V& x) { return pad_tokens(x[0], 8); }, {random_tensor({2, 5, 3}, rng)});
    op("bmm", [](const V& x) { return bmm(x[0], x[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
    op("bmm_transposed", [](const V& x) { return bmm(x[0], x[1], true); },
       {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)});
    op("linear", [](const V& x) { return linear(x[0], x[1], x[2]); },
       {random_tensor({2, 5, 3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)});
    op("layer_norm", [](const V& x) { return layer_norm(x[0], x[1], x[2]); },
       {random_tensor({2, 5, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
    op("gelu", [](const V& x) { return gelu(x[0]); }, {random_tensor({3, 7}, rng, true, 2.0)});
    op("softmax_last", [](const V& x) { return softmax(x[0], -1); }, {random_tensor({3, 5}, rng)});
    op("softmax_first", [](const V& x) { return softmax(x[0], 0); }, {random_tensor({3, 5}, rng)});
    op("conv3d", [](const V& x) { return conv3d(x[0], x[1], x[2], ConvSpec::cube(3, 2, 1, 2, 3)); },
       {random_tensor({2, 2, 5, 6, 4}, rng), random_tensor({3, 2, 3, 3, 3}, rng), random_tensor({3}, rng)});
    op("conv3d_funnel",
       [](const V& x) { return conv3d(x[0], x[1], x[2], ConvSpec{{5, 1, 1}, {1, 1, 1}, {0, 0, 0}, 3, 2}); },
       {random_tensor({2, 3, 5, 3, 4}, rng), random_tensor({2, 3, 5, 1, 1}, rng), random_tensor({2}, rng)});
    op("conv2d", [](const V& x) { return conv2d(x[0], x[1], x[2], ConvSpec::planar(3, 1, 1, 3, 2)); },
       {random_tensor({2, 3, 5, 6}, rng), random_tensor({2, 3, 3, 3}, rng), random_tensor({2}, rng)});
    op("depthwise_conv3d", [](const V& x) { return depthwise_conv3d(x[0], Extents3{3, 4, 5}, x[1], x[2]); },
       {random_tensor({2, 60, 3}, rng), random_tensor({3, 3, 3, 3}, rng), random_tensor({3}, rng)});
    op("upsample_trilinear", [](const V& x) { return upsample_trilinear(x[0], Extents3{4, 5, 6}); },
       {random_tensor({1, 2, 2, 3, 3}, rng)});
    op("upsample_bilinear", [](const V& x) { return upsample_bilinear(x[0], 7, 5); }, {random_tensor({1, 2, 3, 3}, rng)});
    op("attention", [](const V& x) { return attention(x[0], x[1], x[2], 0.5); },
       {random_tensor({2, 6, 4}, rng), random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)});
    {
        std::vector<std::uint16_t> labels(2 * 3 * 3);
        for (auto& v : labels) v = static_cast<std::uint16_t>(rng.below(5));
        op("masked_cross_entropy", [labels](const V& x) { return masked_cross_entropy(x[0], labels); },
           {random_tensor({2, 4, 3, 3}, rng)});
    }

    auto with_params = [](Tensor<double> x, const NamedParams<double>& params) {
        V inputs{std::move(x)};
        for (const auto& [name, p] : params) inputs.push_back(p);
        return inputs;
    };

    {
        auto attn = std::make_shared<EfficientSelfAttention<double>>(8, 2, 4, rng);
        NamedParams<double> params;
        attn->collect(params, "attn");
        composite("efficient_self_attention", [attn](const V& x) { return (*attn)(x[0]); },
                  with_params(random_tensor({2, 16, 8}, rng), params));
    }
    {
        auto ffn = std::make_shared<MixFfn<double>>(4, 4, rng);
        NamedParams<double> params;
        ffn->collect(params, "ffn");
        composite("mix_ffn", [ffn](const V& x) { return (*ffn)(x[0], Extents3{2, 3, 3}); },
                  with_params(random_tensor({2, 18, 4}, rng), params));
    }
    {
        StageConfig sc;
        sc.channels = 8;
        sc.heads = 2;
        sc.reduction = 4;
        auto block = std::make_shared<EncoderBlock<double>>(sc, 2, rng);
        NamedParams<double> params;
        block->collect(params, "block");
        composite("encoder_block", [block](const V& x) { return (*block)(x[0], Extents3{2, 2, 4}); },
                  with_params(random_tensor({1, 16, 8}, rng), params));
    }
    {
        auto cfg = ModelConfig::tiny(8, 3, StrideSchedule::preserving, 8);
        cfg.crop = 8;
        auto model = std::make_shared<AmberModel<double>>(cfg, derive_seed(seed, 7));
        composite("tiny_model", [model](const V& x) { return (*model)(x[0]); },
                  with_params(random_tensor({1, 1, 8, 8, 8}, rng), model->parameters()));
    }
    return report;
}

}  // namespace amber
