#include "amber/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "amber/ops.hpp"

namespace amber {

template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> labels) {
    if (logits.rank() != 4) throw ShapeError("masked_cross_entropy: logits must be [B,N,h,w], got " + shape_str(logits.shape()));
    const auto B = logits.dim(0), N = logits.dim(1), P = logits.dim(2) * logits.dim(3);
    if (static_cast<std::int64_t>(labels.size()) != B * P)
        throw ShapeError("masked_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B * P) + " pixels");
    auto y = std::make_shared<std::vector<std::uint16_t>>(labels.begin(), labels.end());
    std::int64_t defined = 0;
    for (auto v : *y) {
        if (v > N) throw std::invalid_argument("masked_cross_entropy: label " + std::to_string(v) + " exceeds " +
                                               std::to_string(N) + " classes");
        defined += v != 0;
    }
    auto x = logits.data();
    double total = 0;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < P; ++p) {
            const auto label = (*y)[b * P + p];
            if (label == 0) continue;
            const T* base = x.data() + b * N * P + p;
            double mx = base[0];
            for (std::int64_t n = 1; n < N; ++n) mx = std::max(mx, static_cast<double>(base[n * P]));
            double s = 0;
            for (std::int64_t n = 0; n < N; ++n) s += std::exp(base[n * P] - mx);
            total += mx + std::log(s) - base[(label - 1) * P];
        }
    const double loss = defined > 0 ? total / static_cast<double>(defined) : 0.0;
    auto* ln = logits.node().get();
    return make_result<T>("masked_cross_entropy", Shape{}, {static_cast<T>(loss)}, {logits},
                          [ln, y, B, N, P, defined](detail::Node<T>& self) {
                              if (defined == 0) return;
                              auto g = ln->grad_buffer();
                              const double up = static_cast<double>(self.grad[0]) / static_cast<double>(defined);
                              const auto& xd = ln->data;
                              for (std::int64_t b = 0; b < B; ++b)
                                  for (std::int64_t p = 0; p < P; ++p) {
                                      const auto label = (*y)[b * P + p];
                                      if (label == 0) continue;
                                      const auto off = b * N * P + p;
                                      double mx = xd[off];
                                      for (std::int64_t n = 1; n < N; ++n) mx = std::max(mx, static_cast<double>(xd[off + n * P]));
                                      double s = 0;
                                      for (std::int64_t n = 0; n < N; ++n) s += std::exp(xd[off + n * P] - mx);
                                      for (std::int64_t n = 0; n < N; ++n) {
                                          const double prob = std::exp(xd[off + n * P] - mx) / s;
                                          g[off + n * P] += static_cast<T>(up * (prob - (n == label - 1 ? 1.0 : 0.0)));
                                      }
                                  }
                          });
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, T lr) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter and gradient sizes differ");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

template <typename T>
void Sgd<T>::step(const NamedParams<T>& params) {
    if (momentum_ == 0.0) {
        for (const auto& [name, p] : params)
            if (p.has_grad()) sgd_step<T>(Tensor<T>(p).data(), p.grad(), static_cast<T>(lr_));
        return;
    }
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (const auto& [name, p] : params) velocity_.emplace_back(p.numel(), T(0));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor<T> p = params[k].second;
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto& v = velocity_[k];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(momentum_) * v[i] + g[i];
        sgd_step<T>(p.data(), v, static_cast<T>(lr_));
    }
}

template <typename T>
void Sgd<T>::zero_grad(const NamedParams<T>& params) {
    for (const auto& [name, p] : params) Tensor<T>(p).zero_grad();
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must lie in [0, 1)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (stream * 0xD1B54A32D192ED03ULL));
    return r.next_u64();
}

Batch make_batch(const HyperCube& cube, const LabelMap& labels, std::span<const Patch> patches, std::int64_t crop,
                 Rng* flip_rng) {
    const auto B = static_cast<std::int64_t>(patches.size());
    const auto per = cube.bands * crop * crop;
    Batch batch{Tensor<float>(Shape{B, 1, cube.bands, crop, crop}), {}};
    batch.labels.reserve(static_cast<std::size_t>(B * crop * crop));
    auto dst = batch.x.data();
    for (std::int64_t b = 0; b < B; ++b) {
        auto c = extract_crop(cube, labels, patches[b].row, patches[b].col, crop);
        if (flip_rng) random_flip(c, *flip_rng);
        auto src = c.data.data();
        std::copy(src.begin(), src.end(), dst.begin() + b * per);
        batch.labels.insert(batch.labels.end(), c.labels.labels.begin(), c.labels.labels.end());
    }
    return batch;
}

std::vector<double> train(const TrainConfig& cfg, AmberModel<float>& model, const HyperCube& cube,
                          const LabelMap& labels, const PatchSet& ps, const EpochCallback& on_epoch) {
    cfg.validate();
    auto train_set = ps.of(Split::train);
    if (train_set.empty()) throw std::invalid_argument("train: no train patches");
    const auto params = model.parameters();
    Sgd<float> opt(cfg.learning_rate, cfg.momentum);
    Rng rng(derive_seed(cfg.seed, 3));
    std::vector<double> history;
    const auto n = static_cast<std::int64_t>(train_set.size());
    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(train_set);
        double total = 0;
        std::int64_t batches = 0;
        for (std::int64_t first = 0; first < n; first += cfg.batch_size) {
            const auto count = std::min(cfg.batch_size, n - first);
            auto batch = make_batch(cube, labels, std::span<const Patch>(train_set).subspan(first, count), ps.crop,
                                    cfg.flip ? &rng : nullptr);
            Sgd<float>::zero_grad(params);
            auto loss = masked_cross_entropy(model(batch.x), batch.labels);
            loss.backward();
            opt.step(params);
            total += loss.item();
            ++batches;
        }
        history.push_back(total / static_cast<double>(batches));
        if (on_epoch) on_epoch(epoch, history.back());
    }
    return history;
}

std::vector<std::uint16_t> argmax_classes(const Tensor<float>& logits) {
    const auto B = logits.dim(0), N = logits.dim(1), P = logits.dim(2) * logits.dim(3);
    auto x = logits.data();
    std::vector<std::uint16_t> out(static_cast<std::size_t>(B * P));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < P; ++p) {
            const float* base = x.data() + b * N * P + p;
            std::int64_t best = 0;
            for (std::int64_t n = 1; n < N; ++n)
                if (base[n * P] > base[best * P]) best = n;
            out[b * P + p] = static_cast<std::uint16_t>(best + 1);
        }
    return out;
}

std::vector<std::uint16_t> predict_centers(const AmberModel<float>& model, const HyperCube& cube,
                                           const LabelMap& labels, std::span<const Patch> patches,
                                           std::int64_t crop, std::int64_t micro_batch) {
    std::vector<std::uint16_t> out;
    out.reserve(patches.size());
    const auto n = static_cast<std::int64_t>(patches.size());
    const auto half = crop / 2;
    for (std::int64_t first = 0; first < n; first += micro_batch) {
        const auto count = std::min(micro_batch, n - first);
        auto batch = make_batch(cube, labels, patches.subspan(first, count), crop, nullptr);
        const auto cls = argmax_classes(model.infer(batch.x, micro_batch));
        for (std::int64_t b = 0; b < count; ++b) out.push_back(cls[(b * crop + half) * crop + half]);
    }
    return out;
}

namespace {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const auto period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

LabelMap predict_full(const Checkpoint& ckpt, const HyperCube& cube, std::int64_t micro_batch) {
    const auto& mc = ckpt.model.config();
    if (cube.bands != mc.bands)
        throw ShapeError("predict: cube has " + std::to_string(cube.bands) + " bands, checkpoint expects " +
                         std::to_string(mc.bands));
    HyperCube norm = cube;
    ckpt.stats.apply(norm);
    const auto tile = mc.crop;
    const auto Hp = (cube.height + tile - 1) / tile * tile;
    const auto Wp = (cube.width + tile - 1) / tile * tile;
    const auto D = cube.bands;

    struct Origin {
        std::int64_t r, c;
    };
    std::vector<Origin> tiles;
    for (std::int64_t r = 0; r < Hp; r += tile)
        for (std::int64_t c = 0; c < Wp; c += tile) tiles.push_back({r, c});

    LabelMap out(cube.height, cube.width);
    const auto n = static_cast<std::int64_t>(tiles.size());
    const auto per = D * tile * tile;
    for (std::int64_t first = 0; first < n; first += micro_batch) {
        const auto count = std::min(micro_batch, n - first);
        Tensor<float> x(Shape{count, 1, D, tile, tile});
        auto dst = x.data();
        for (std::int64_t b = 0; b < count; ++b) {
            const auto& o = tiles[first + b];
            for (std::int64_t d = 0; d < D; ++d)
                for (std::int64_t r = 0; r < tile; ++r) {
                    const auto sr = reflect_index(o.r + r, cube.height);
                    for (std::int64_t c = 0; c < tile; ++c)
                        dst[b * per + (d * tile + r) * tile + c] = norm.at(d, sr, reflect_index(o.c + c, cube.width));
                }
        }
        const auto cls = argmax_classes(ckpt.model.infer(x, micro_batch));
        for (std::int64_t b = 0; b < count; ++b) {
            const auto& o = tiles[first + b];
            for (std::int64_t r = 0; r < tile && o.r + r < cube.height; ++r)
                for (std::int64_t c = 0; c < tile && o.c + c < cube.width; ++c)
                    out.at(o.r + r, o.c + c) = cls[(b * tile + r) * tile + c];
        }
    }
    return out;
}

void write_loss_csv(const std::vector<double>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < history.size(); ++i) out << fmt::format("{},{:.9f}\n", i + 1, history[i]);
}

template Tensor<float> masked_cross_entropy(const Tensor<float>&, std::span<const std::uint16_t>);
template Tensor<double> masked_cross_entropy(const Tensor<double>&, std::span<const std::uint16_t>);
template void sgd_step(std::span<float>, std::span<const float>, float);
template void sgd_step(std::span<double>, std::span<const double>, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace amber
