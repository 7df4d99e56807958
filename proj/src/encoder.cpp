#include "amber/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace amber {

std::string to_string(StrideSchedule s) { return s == StrideSchedule::preserving ? "preserving" : "classic"; }

StrideSchedule parse_stride_schedule(const std::string& name) {
    if (name == "preserving") return StrideSchedule::preserving;
    if (name == "classic") return StrideSchedule::classic;
    throw std::invalid_argument("unknown stride schedule '" + name + "' (expected preserving|classic)");
}

EncoderConfig EncoderConfig::make(StrideSchedule schedule, const std::vector<std::int64_t>& channels,
                                  const std::vector<std::int64_t>& blocks, const std::vector<std::int64_t>& heads,
                                  const std::vector<std::int64_t>& reduction) {
    const auto n = channels.size();
    if (n == 0 || blocks.size() != n || heads.size() != n || reduction.size() != n)
        throw std::invalid_argument("encoder: channels/blocks/heads/reduction must have equal, non-zero length");
    EncoderConfig cfg;
    for (std::size_t i = 0; i < n; ++i) {
        StageConfig s;
        const std::int64_t stride = (i == 0 && schedule == StrideSchedule::preserving) ? 1 : 2;
        s.stride = {stride, stride, stride};
        // K=3 with P=1 keeps S=1 stages the same size and halves S=2 stages exactly.
        s.kernel = {3, 3, 3};
        s.padding = {1, 1, 1};
        s.channels = channels[i];
        s.blocks = blocks[i];
        s.heads = heads[i];
        s.reduction = reduction[i];
        cfg.stages.push_back(s);
    }
    return cfg;
}

EncoderConfig EncoderConfig::standard(StrideSchedule schedule) {
    return make(schedule, {32, 64, 160, 256}, {2, 2, 2, 2}, {1, 2, 5, 8}, {64, 16, 4, 1});
}

void EncoderConfig::validate() const {
    if (stages.empty()) throw std::invalid_argument("encoder: at least one stage required");
    if (in_channels < 1) throw std::invalid_argument("encoder: in_channels must be >= 1");
    if (ffn_expansion < 1) throw std::invalid_argument("encoder: ffn_expansion must be >= 1");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        const auto tag = "encoder stage " + std::to_string(i + 1) + ": ";
        if (s.channels < 1 || s.heads < 1 || s.blocks < 1 || s.reduction < 1)
            throw std::invalid_argument(tag + "channels, heads, blocks and reduction must be >= 1");
        if (s.channels % s.heads != 0)
            throw std::invalid_argument(tag + "channels " + std::to_string(s.channels) + " not divisible by heads " +
                                        std::to_string(s.heads));
        if (i > 0 && s.channels <= stages[i - 1].channels)
            throw std::invalid_argument(tag + "channels must increase from stage to stage");
        ConvSpec{s.kernel, s.stride, s.padding, 1, 1}.validate();
    }
}

std::vector<Extents3> EncoderConfig::stage_extents(const Extents3& input) const {
    std::vector<Extents3> out;
    Extents3 cur = input;
    for (const auto& s : stages) {
        cur = ConvSpec{s.kernel, s.stride, s.padding, 1, 1}.output_extents(cur);
        out.push_back(cur);
    }
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
EfficientSelfAttention<T>::EfficientSelfAttention(std::int64_t channels, std::int64_t heads, std::int64_t reduction,
                                                  Rng& rng)
    : query(channels, channels, rng),
      key(channels, channels, rng),
      value(channels, channels, rng),
      proj(channels, channels, rng),
      channels_(channels),
      heads_(heads),
      reduction_(reduction) {
    if (heads < 1 || channels % heads != 0) throw std::invalid_argument("attention: channels must divide into heads");
    if (reduction < 1) throw std::invalid_argument("attention: reduction ratio must be >= 1");
    if (reduction > 1) {
        reducer = Linear<T>(channels * reduction, channels, rng);
        reducer_norm = LayerNorm<T>(channels);
    }
}

template <typename T>
Tensor<T> EfficientSelfAttention<T>::split_heads(const Tensor<T>& x) const {
    const auto B = x.dim(0), L = x.dim(1);
    const auto dh = channels_ / heads_;
    if (heads_ == 1) return x;
    return reshape(permute(reshape(x, Shape{B, L, heads_, dh}), {0, 2, 1, 3}), Shape{B * heads_, L, dh});
}

template <typename T>
Tensor<T> EfficientSelfAttention<T>::merge_heads(const Tensor<T>& x, std::int64_t batch) const {
    const auto L = x.dim(1);
    const auto dh = channels_ / heads_;
    if (heads_ == 1) return x;
    return reshape(permute(reshape(x, Shape{batch, heads_, L, dh}), {0, 2, 1, 3}), Shape{batch, L, channels_});
}

template <typename T>
Tensor<T> EfficientSelfAttention<T>::reduce(const Tensor<T>& tokens) const {
    if (reduction_ == 1) return tokens;
    const auto B = tokens.dim(0), N = tokens.dim(1);
    const auto M = kv_length(N);
    Tensor<T> src = (M * reduction_ == N) ? tokens : pad_tokens(tokens, M * reduction_);
    auto grouped = reshape(src, Shape{B, M, reduction_ * channels_});
    return reducer_norm(reducer(grouped));
}

template <typename T>
Tensor<T> EfficientSelfAttention<T>::operator()(const Tensor<T>& tokens) const {
    if (tokens.rank() != 3 || tokens.dim(2) != channels_)
        throw ShapeError("attention: expected [B,N," + std::to_string(channels_) + "], got " +
                         shape_str(tokens.shape()));
    const auto B = tokens.dim(0);
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(channels_ / heads_));
    auto src = reduce(tokens);
    auto q = split_heads(query(tokens));
    auto k = split_heads(key(src));
    auto v = split_heads(value(src));
    auto o = attention(q, k, v, scale_factor);
    return proj(merge_heads(o, B));
}

template <typename T>
Tensor<T> EfficientSelfAttention<T>::weights(const Tensor<T>& tokens) const {
    NoGradGuard guard;
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(channels_ / heads_));
    auto src = reduce(tokens);
    return attention_weights(split_heads(query(tokens)), split_heads(key(src)), scale_factor);
}

template <typename T>
void EfficientSelfAttention<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    proj.collect(out, prefix + ".proj");
    if (reduction_ > 1) {
        reducer.collect(out, prefix + ".reducer");
        reducer_norm.collect(out, prefix + ".reducer_norm");
    }
}

// ---------------------------------------------------------------------------

template <typename T>
MixFfn<T>::MixFfn(std::int64_t channels, std::int64_t expansion, Rng& rng)
    : fc1(channels, channels * expansion, rng),
      fc2(channels * expansion, channels, rng),
      dw_weight(fan_in_uniform<T>({3, 3, 3, channels * expansion}, 27, rng)),
      dw_bias(Shape{channels * expansion}, true) {}

template <typename T>
Tensor<T> MixFfn<T>::branch(const Tensor<T>& tokens, const Extents3& grid) const {
    auto h = fc1(tokens);
    h = depthwise_conv3d(h, grid, dw_weight, dw_bias);
    return fc2(gelu(h));
}

template <typename T>
Tensor<T> MixFfn<T>::operator()(const Tensor<T>& tokens, const Extents3& grid) const {
    return add(branch(tokens, grid), tokens);
}

template <typename T>
void MixFfn<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    out.emplace_back(prefix + ".dwconv.weight", dw_weight);
    out.emplace_back(prefix + ".dwconv.bias", dw_bias);
    fc2.collect(out, prefix + ".fc2");
}

// ---------------------------------------------------------------------------

template <typename T>
EncoderBlock<T>::EncoderBlock(const StageConfig& cfg, std::int64_t expansion, Rng& rng)
    : norm1(cfg.channels),
      attn(cfg.channels, cfg.heads, cfg.reduction, rng),
      norm2(cfg.channels),
      ffn(cfg.channels, expansion, rng) {}

template <typename T>
Tensor<T> EncoderBlock<T>::operator()(const Tensor<T>& tokens, const Extents3& grid) const {
    auto y = add(tokens, attn(norm1(tokens)));
    return add(y, ffn.branch(norm2(y), grid));
}

template <typename T>
void EncoderBlock<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    ffn.collect(out, prefix + ".ffn");
}

// ---------------------------------------------------------------------------

template <typename T>
EncoderStage<T>::EncoderStage(const StageConfig& cfg, std::int64_t in_channels, std::int64_t expansion, Rng& rng)
    : config(cfg),
      patch(ConvSpec{cfg.kernel, cfg.stride, cfg.padding, in_channels, cfg.channels}, rng),
      patch_norm(cfg.channels),
      out_norm(cfg.channels) {
    for (std::int64_t i = 0; i < cfg.blocks; ++i) blocks.emplace_back(cfg, expansion, rng);
}

template <typename T>
Tensor<T> EncoderStage<T>::patch_merge(const Tensor<T>& x, Extents3& grid_out) const {
    auto y = patch(x);
    grid_out = {y.dim(2), y.dim(3), y.dim(4)};
    return patch_norm(grid_to_tokens(y));
}

template <typename T>
Tensor<T> EncoderStage<T>::operator()(const Tensor<T>& x, Extents3& grid_out) const {
    auto tokens = patch_merge(x, grid_out);
    for (const auto& block : blocks) tokens = block(tokens, grid_out);
    return out_norm(tokens);
}

template <typename T>
void EncoderStage<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    patch.collect(out, prefix + ".patch");
    patch_norm.collect(out, prefix + ".patch_norm");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
    out_norm.collect(out, prefix + ".out_norm");
}

// ---------------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, Rng& rng) : config_(cfg) {
    cfg.validate();
    std::int64_t in = cfg.in_channels;
    for (const auto& s : cfg.stages) {
        stages.emplace_back(s, in, cfg.ffn_expansion, rng);
        in = s.channels;
    }
}

template <typename T>
FeaturePyramid<T> Encoder<T>::operator()(const Tensor<T>& x) const {
    if (x.rank() != 5 || x.dim(1) != config_.in_channels)
        throw ShapeError("encoder: expected [B," + std::to_string(config_.in_channels) + ",D,H,W], got " +
                         shape_str(x.shape()));
    FeaturePyramid<T> pyr;
    Tensor<T> cur = x;
    for (const auto& stage : stages) {
        Extents3 grid;
        auto tokens = stage(cur, grid);
        cur = tokens_to_grid(tokens, grid);
        pyr.tokens.push_back(tokens);
        pyr.features.push_back(cur);
        pyr.extents.push_back(grid);
    }
    return pyr;
}

template <typename T>
void Encoder<T>::collect(NamedParams<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(out, prefix + ".stage" + std::to_string(i + 1));
}

template class EfficientSelfAttention<float>;
template class EfficientSelfAttention<double>;
template class MixFfn<float>;
template class MixFfn<double>;
template struct EncoderBlock<float>;
template struct EncoderBlock<double>;
template class EncoderStage<float>;
template class EncoderStage<double>;
template class Encoder<float>;
template class Encoder<double>;

}  // namespace amber
