#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "amber/nn.hpp"

namespace amber {

/// How the four patch-merging stages stride. `preserving` keeps stage 1 at
/// the input resolution (S=1) and halves afterwards; `classic` halves at
/// every stage.
enum class StrideSchedule { preserving, classic };

std::string to_string(StrideSchedule s);
StrideSchedule parse_stride_schedule(const std::string& name);

struct StageConfig {
    std::array<std::int64_t, 3> kernel{3, 3, 3};
    std::array<std::int64_t, 3> stride{1, 1, 1};
    std::array<std::int64_t, 3> padding{1, 1, 1};
    std::int64_t channels = 32;
    std::int64_t blocks = 2;
    std::int64_t heads = 1;
    std::int64_t reduction = 1;

    std::int64_t head_dim() const { return channels / heads; }
};

struct EncoderConfig {
    std::vector<StageConfig> stages;
    std::int64_t in_channels = 1;
    std::int64_t ffn_expansion = 4;

    /// Channels, blocks, heads and reduction ratios per stage; the stride of
    /// stage i is taken from `schedule`.
    static EncoderConfig make(StrideSchedule schedule, const std::vector<std::int64_t>& channels,
                              const std::vector<std::int64_t>& blocks, const std::vector<std::int64_t>& heads,
                              const std::vector<std::int64_t>& reduction);
    /// C=[32,64,160,256], L=[2,2,2,2], h=[1,2,5,8], R=[64,16,4,1].
    static EncoderConfig standard(StrideSchedule schedule);

    void validate() const;
    /// Grid extents after each stage for an input grid.
    std::vector<Extents3> stage_extents(const Extents3& input) const;
};

template <typename T>
struct FeaturePyramid {
    std::vector<Tensor<T>> features;  // F_i as [B, C_i, D_i, H_i, W_i]
    std::vector<Tensor<T>> tokens;    // the same values as [B, N_i, C_i]
    std::vector<Extents3> extents;
};

/// Multi-head attention whose keys and values come from a sequence shortened
/// by grouping `reduction` consecutive tokens (row-major grid order) and
/// projecting C*R -> C, followed by layer normalization. With R = 1 there is
/// no reduction stage and keys/values come from the full sequence.
template <typename T>
class EfficientSelfAttention {
   public:
    EfficientSelfAttention() = default;
    EfficientSelfAttention(std::int64_t channels, std::int64_t heads, std::int64_t reduction, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& tokens) const;

    /// Keys/values of length ceil(N/R). A sequence that R does not divide is
    /// zero-padded to the next multiple before grouping.
    std::int64_t kv_length(std::int64_t n) const { return (n + reduction_ - 1) / reduction_; }
    /// The shortened sequence fed to the key/value projections.
    Tensor<T> reduce(const Tensor<T>& tokens) const;
    /// Per-head attention probabilities [B*heads, N, kv_length(N)] (no graph).
    Tensor<T> weights(const Tensor<T>& tokens) const;

    std::int64_t channels() const { return channels_; }
    std::int64_t heads() const { return heads_; }
    std::int64_t reduction() const { return reduction_; }

    void collect(NamedParams<T>& out, const std::string& prefix) const;

    Linear<T> query, key, value, proj;
    Linear<T> reducer;  // only for reduction > 1
    LayerNorm<T> reducer_norm;

   private:
    Tensor<T> split_heads(const Tensor<T>& x) const;
    Tensor<T> merge_heads(const Tensor<T>& x, std::int64_t batch) const;

    std::int64_t channels_ = 0;
    std::int64_t heads_ = 1;
    std::int64_t reduction_ = 1;
};

/// x_out = MLP(GELU(DWConv3x3x3(MLP(x_in)))) + x_in over tokens on a 3D grid.
template <typename T>
class MixFfn {
   public:
    MixFfn() = default;
    MixFfn(std::int64_t channels, std::int64_t expansion, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& tokens, const Extents3& grid) const;
    /// Everything but the residual connection.
    Tensor<T> branch(const Tensor<T>& tokens, const Extents3& grid) const;

    std::int64_t hidden_channels() const { return fc1.weight.dim(1); }
    void collect(NamedParams<T>& out, const std::string& prefix) const;

    Linear<T> fc1, fc2;
    Tensor<T> dw_weight;  // [3,3,3,hidden]
    Tensor<T> dw_bias;    // [hidden]
};

template <typename T>
struct EncoderBlock {
    LayerNorm<T> norm1;
    EfficientSelfAttention<T> attn;
    LayerNorm<T> norm2;
    MixFfn<T> ffn;

    EncoderBlock() = default;
    EncoderBlock(const StageConfig& cfg, std::int64_t expansion, Rng& rng);

    /// y = x + attn(norm1(x)); out = y + ffn.branch(norm2(y))
    Tensor<T> operator()(const Tensor<T>& tokens, const Extents3& grid) const;
    void collect(NamedParams<T>& out, const std::string& prefix) const;
};

template <typename T>
class EncoderStage {
   public:
    EncoderStage() = default;
    EncoderStage(const StageConfig& cfg, std::int64_t in_channels, std::int64_t expansion, Rng& rng);

    /// Strided 3D convolution, then layer norm over channels of the token sequence.
    Tensor<T> patch_merge(const Tensor<T>& x, Extents3& grid_out) const;
    /// Returns tokens [B,N,C]; `grid_out` receives the stage extents.
    Tensor<T> operator()(const Tensor<T>& x, Extents3& grid_out) const;
    void collect(NamedParams<T>& out, const std::string& prefix) const;

    StageConfig config;
    Conv3d<T> patch;
    LayerNorm<T> patch_norm;
    std::vector<EncoderBlock<T>> blocks;
    LayerNorm<T> out_norm;
};

template <typename T>
class Encoder {
   public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, Rng& rng);

    FeaturePyramid<T> operator()(const Tensor<T>& x) const;
    void collect(NamedParams<T>& out, const std::string& prefix) const;

    const EncoderConfig& config() const { return config_; }
    std::vector<EncoderStage<T>> stages;

   private:
    EncoderConfig config_;
};

extern template class EfficientSelfAttention<float>;
extern template class EfficientSelfAttention<double>;
extern template class MixFfn<float>;
extern template class MixFfn<double>;
extern template struct EncoderBlock<float>;
extern template struct EncoderBlock<double>;
extern template class EncoderStage<float>;
extern template class EncoderStage<double>;
extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace amber
