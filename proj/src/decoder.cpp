#include "amber/decoder.hpp"

#include <stdexcept>

namespace amber {

void DecoderConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("decoder: channels must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("decoder: n_classes must be >= 2");
    if (funnel_depth < 1) throw std::invalid_argument("decoder: funnel depth must be >= 1");
}

template <typename T>
Decoder<T>::Decoder(const DecoderConfig& cfg, const std::vector<std::int64_t>& stage_channels, Rng& rng)
    : config_(cfg) {
    cfg.validate();
    const auto C = cfg.channels;
    const auto S = static_cast<std::int64_t>(stage_channels.size());
    for (auto ci : stage_channels) unify_layers.emplace_back(ci, C, rng);
    fuse_layer = Linear<T>(S * C, C, rng);
    fuse_norm = LayerNorm<T>(C);
    funnel = Conv3d<T>(ConvSpec{{cfg.funnel_depth, 1, 1}, {1, 1, 1}, {0, 0, 0}, C, C}, rng);
    classifier = Conv2d<T>(ConvSpec::planar(1, 1, 0, C, cfg.n_classes), rng);
}

template <typename T>
std::vector<Tensor<T>> Decoder<T>::unify(const FeaturePyramid<T>& pyramid) const {
    if (pyramid.tokens.size() != unify_layers.size())
        throw ShapeError("decoder: pyramid has " + std::to_string(pyramid.tokens.size()) + " stages, expected " +
                         std::to_string(unify_layers.size()));
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < unify_layers.size(); ++i)
        out.push_back(tokens_to_grid(unify_layers[i](pyramid.tokens[i]), pyramid.extents[i]));
    return out;
}

template <typename T>
Tensor<T> Decoder<T>::upsample_concat(const std::vector<Tensor<T>>& grids) const {
    if (grids.empty()) throw ShapeError("decoder: nothing to concatenate");
    const Extents3 target{grids[0].dim(2), grids[0].dim(3), grids[0].dim(4)};
    std::vector<Tensor<T>> up;
    up.reserve(grids.size());
    up.push_back(grids[0]);
    for (std::size_t i = 1; i < grids.size(); ++i) up.push_back(upsample_trilinear(grids[i], target));
    return concat(up, 1);
}

template <typename T>
Tensor<T> Decoder<T>::fuse(const Tensor<T>& cat, bool normalize) const {
    const Extents3 grid{cat.dim(2), cat.dim(3), cat.dim(4)};
    auto tokens = fuse_layer(grid_to_tokens(cat));
    if (normalize) tokens = fuse_norm(gelu(tokens));
    return tokens_to_grid(tokens, grid);
}

template <typename T>
Tensor<T> Decoder<T>::funnelize(const Tensor<T>& fused) const {
    if (fused.rank() != 5) throw ShapeError("funnelize: expected [B,C,D,H,W], got " + shape_str(fused.shape()));
    if (fused.dim(2) != config_.funnel_depth)
        throw ShapeError("funnelize: kernel depth " + std::to_string(config_.funnel_depth) +
                         " does not match spectral extent " + std::to_string(fused.dim(2)));
    auto y = funnel(fused);
    return reshape(y, Shape{y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

template <typename T>
Tensor<T> Decoder<T>::classify(const Tensor<T>& planar, std::int64_t height, std::int64_t width) const {
    auto logits = classifier(planar);
    if (logits.dim(2) == height && logits.dim(3) == width) return logits;
    return upsample_bilinear(logits, height, width);
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const FeaturePyramid<T>& pyramid, std::int64_t height, std::int64_t width) const {
    return classify(funnelize(fuse(upsample_concat(unify(pyramid)))), height, width);
}

template <typename T>
void Decoder<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < unify_layers.size(); ++i)
        unify_layers[i].collect(out, prefix + ".unify" + std::to_string(i + 1));
    fuse_layer.collect(out, prefix + ".fuse");
    fuse_norm.collect(out, prefix + ".fuse_norm");
    funnel.collect(out, prefix + ".funnel");
    classifier.collect(out, prefix + ".classifier");
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace amber
