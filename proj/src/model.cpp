#include "amber/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace amber {

ModelConfig ModelConfig::standard(std::int64_t bands, std::int64_t n_classes, StrideSchedule schedule) {
    ModelConfig cfg;
    cfg.bands = bands;
    cfg.n_classes = n_classes;
    cfg.schedule = schedule;
    cfg.encoder = EncoderConfig::standard(schedule);
    cfg.decoder_channels = 256;
    return cfg;
}

ModelConfig ModelConfig::tiny(std::int64_t bands, std::int64_t n_classes, StrideSchedule schedule,
                              std::int64_t decoder_channels) {
    ModelConfig cfg;
    cfg.bands = bands;
    cfg.n_classes = n_classes;
    cfg.schedule = schedule;
    cfg.encoder = EncoderConfig::make(schedule, {4, 8, 12, 16}, {1, 1, 1, 1}, {1, 2, 3, 4}, {64, 16, 4, 1});
    cfg.decoder_channels = decoder_channels;
    return cfg;
}

void ModelConfig::validate() const {
    if (bands < 1) throw std::invalid_argument("model: bands must be >= 1");
    if (crop < 1) throw std::invalid_argument("model: crop must be >= 1");
    encoder.validate();
    decoder().validate();
    // throws if any stage collapses to an empty grid
    (void)stage_extents();
}

DecoderConfig ModelConfig::decoder() const {
    DecoderConfig d;
    d.channels = decoder_channels;
    d.n_classes = n_classes;
    d.funnel_depth = encoder.stage_extents(input_grid()).front().d;
    return d;
}

template <typename T>
AmberModel<T>::AmberModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Rng rng(seed);
    encoder = Encoder<T>(cfg.encoder, rng);
    std::vector<std::int64_t> widths;
    for (const auto& s : cfg.encoder.stages) widths.push_back(s.channels);
    decoder = Decoder<T>(cfg.decoder(), widths, rng);
}

template <typename T>
Tensor<T> AmberModel<T>::operator()(const Tensor<T>& x) const {
    if (x.rank() != 5 || x.dim(1) != 1)
        throw ShapeError("model: expected input [B,1,D,H,W], got " + shape_str(x.shape()));
    if (x.dim(2) != config_.bands)
        throw ShapeError("model: input has " + std::to_string(x.dim(2)) + " bands, model was built for " +
                         std::to_string(config_.bands));
    return decoder(encoder(x), x.dim(3), x.dim(4));
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t first, std::int64_t count) {
    if (first < 0 || count < 0 || first + count > x.dim(0)) throw ShapeError("slice_batch: range out of bounds");
    const auto per = x.numel() / std::max<std::int64_t>(x.dim(0), 1);
    Shape shape = x.shape();
    shape[0] = count;
    auto src = x.data();
    return Tensor<T>(shape, std::vector<T>(src.begin() + first * per, src.begin() + (first + count) * per));
}

template <typename T>
Tensor<T> AmberModel<T>::infer(const Tensor<T>& x, std::int64_t micro_batch) const {
    NoGradGuard guard;
    const auto B = x.dim(0);
    if (micro_batch < 1 || B <= micro_batch) return (*this)(x);
    std::vector<Tensor<T>> parts;
    for (std::int64_t b = 0; b < B; b += micro_batch)
        parts.push_back((*this)(slice_batch(x, b, std::min(micro_batch, B - b))));
    return concat(parts, 0);
}

template <typename T>
NamedParams<T> AmberModel<T>::parameters() const {
    NamedParams<T> out;
    encoder.collect(out, "encoder");
    decoder.collect(out, "decoder");
    return out;
}

template <typename T>
std::int64_t AmberModel<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
}

template class AmberModel<float>;
template class AmberModel<double>;
template Tensor<float> slice_batch(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> slice_batch(const Tensor<double>&, std::int64_t, std::int64_t);

}  // namespace amber
