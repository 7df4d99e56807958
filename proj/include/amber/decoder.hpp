#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amber/encoder.hpp"
#include "amber/nn.hpp"

namespace amber {

struct DecoderConfig {
    std::int64_t channels = 256;     // unified width C_dec
    std::int64_t n_classes = 2;
    std::int64_t funnel_depth = 1;   // spectral extent of the stage-1 grid

    void validate() const;
};

/// All-MLP decoder: unify -> upsample+concat -> fuse -> funnelize -> classify.
template <typename T>
class Decoder {
   public:
    Decoder() = default;
    Decoder(const DecoderConfig& cfg, const std::vector<std::int64_t>& stage_channels, Rng& rng);

    /// Per-stage channel map C_i -> C_dec; returns [B, C_dec, D_i, H_i, W_i] grids.
    std::vector<Tensor<T>> unify(const FeaturePyramid<T>& pyramid) const;
    /// Upsamples every grid to the first grid's extents and concatenates along channels.
    Tensor<T> upsample_concat(const std::vector<Tensor<T>>& grids) const;
    /// Pointwise (S*C_dec -> C_dec) map, GELU, then layer norm over channels.
    Tensor<T> fuse(const Tensor<T>& concat, bool normalize = true) const;
    /// (D_f x 1 x 1) convolution collapsing the spectral axis: [B,C,D,H,W] -> [B,C,H,W].
    Tensor<T> funnelize(const Tensor<T>& fused) const;
    /// 1x1 planar convolution to class logits, resized to (height, width) when needed.
    Tensor<T> classify(const Tensor<T>& planar, std::int64_t height, std::int64_t width) const;

    Tensor<T> operator()(const FeaturePyramid<T>& pyramid, std::int64_t height, std::int64_t width) const;
    void collect(NamedParams<T>& out, const std::string& prefix) const;

    const DecoderConfig& config() const { return config_; }

    std::vector<Linear<T>> unify_layers;
    Linear<T> fuse_layer;
    LayerNorm<T> fuse_norm;
    Conv3d<T> funnel;
    Conv2d<T> classifier;

   private:
    DecoderConfig config_;
};

extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace amber
