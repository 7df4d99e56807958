#pragma once

#include <cstdint>
#include <vector>

#include "amber/decoder.hpp"
#include "amber/encoder.hpp"

namespace amber {

/// Everything needed to rebuild an AMBER network: encoder stages, decoder
/// width, class count and the input crop (which fixes the Funnelizer depth).
struct ModelConfig {
    std::int64_t bands = 16;
    std::int64_t crop = 32;
    StrideSchedule schedule = StrideSchedule::preserving;
    EncoderConfig encoder = EncoderConfig::standard(StrideSchedule::preserving);
    std::int64_t decoder_channels = 256;
    std::int64_t n_classes = 2;

    static ModelConfig standard(std::int64_t bands, std::int64_t n_classes,
                                StrideSchedule schedule = StrideSchedule::preserving);
    /// C=[4,8,12,16], L=[1,1,1,1], h=[1,2,3,4], R=[64,16,4,1].
    static ModelConfig tiny(std::int64_t bands, std::int64_t n_classes,
                            StrideSchedule schedule = StrideSchedule::preserving,
                            std::int64_t decoder_channels = 16);

    void validate() const;
    Extents3 input_grid() const { return {bands, crop, crop}; }
    std::vector<Extents3> stage_extents() const { return encoder.stage_extents(input_grid()); }
    DecoderConfig decoder() const;
};

template <typename T>
class AmberModel {
   public:
    AmberModel(const ModelConfig& cfg, std::uint64_t seed);

    /// x[B,1,D,H,W] -> logits[B,N_cls,H,W].
    Tensor<T> operator()(const Tensor<T>& x) const;
    FeaturePyramid<T> encode(const Tensor<T>& x) const { return encoder(x); }

    /// Graph-free forward that runs the batch `micro_batch` samples at a time.
    Tensor<T> infer(const Tensor<T>& x, std::int64_t micro_batch = 1) const;

    /// Every trainable tensor once, in a fixed order, with hierarchical names.
    NamedParams<T> parameters() const;
    std::int64_t parameter_count() const;

    const ModelConfig& config() const { return config_; }

    template <typename U>
    AmberModel<U> cast() const {
        AmberModel<U> out(config_, 0);
        auto src = parameters();
        auto dst = out.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto from = src[i].second.data();
            auto to = dst[i].second.data();
            for (std::size_t j = 0; j < from.size(); ++j) to[j] = static_cast<U>(from[j]);
        }
        return out;
    }

    Encoder<T> encoder;
    Decoder<T> decoder;

   private:
    ModelConfig config_;
};

/// Copies samples [first, first+count) of a batch-major tensor into a fresh leaf.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t first, std::int64_t count);

extern template class AmberModel<float>;
extern template class AmberModel<double>;

}  // namespace amber
