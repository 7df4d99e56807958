#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "amber/tensor.hpp"

namespace amber {

/// Spatial extents of a (depth, height, width) grid.
struct Extents3 {
    std::int64_t d = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t count() const { return d * h * w; }
    bool operator==(const Extents3&) const = default;
};

/// Kernel, stride and padding per (depth, height, width) axis. A planar
/// (2D) convolution is a spec with depth kernel 1, stride 1, padding 0.
struct ConvSpec {
    std::array<std::int64_t, 3> kernel{1, 1, 1};
    std::array<std::int64_t, 3> stride{1, 1, 1};
    std::array<std::int64_t, 3> padding{0, 0, 0};
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;

    static ConvSpec cube(std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t cin, std::int64_t cout);
    static ConvSpec planar(std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t cin, std::int64_t cout);

    /// floor((n + 2P - K)/S) + 1; throws ShapeError when < 1.
    std::int64_t output_extent(int axis, std::int64_t n) const;
    Extents3 output_extents(const Extents3& in) const;
    void validate() const;
};

// Elementwise and reductions.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
/// Zero-pads axis 1 of a [B,N,C] tensor up to `length` rows.
template <typename T> Tensor<T> pad_tokens(const Tensor<T>& a, std::int64_t length);

/// Batched product of [G,M,K] and [G,K,N] (or [G,N,K] with transpose_b).
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// x[...,Cin] * w[Cin,Cout] + b[Cout]. `b` may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6));

/// Exact Gaussian-CDF GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// x[B,Cin,D,H,W], w[Cout,Cin,Kd,Kh,Kw], b[Cout] (may be undefined).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec);
/// x[B,Cin,H,W], w[Cout,Cin,Kh,Kw]; spec must be planar.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec);

/// 3x3x3 depthwise convolution, stride 1, zero padding 1, on a channel-last
/// token sequence x[B,N,C] laid out over `grid` in (d,h,w) row-major order.
/// w[3,3,3,C], b[C].
template <typename T>
Tensor<T> depthwise_conv3d(const Tensor<T>& x, const Extents3& grid, const Tensor<T>& w, const Tensor<T>& b);

/// Trilinear resize of x[B,C,d,h,w] with the half-pixel (align_corners=false) convention.
template <typename T> Tensor<T> upsample_trilinear(const Tensor<T>& x, const Extents3& target);
/// Bilinear resize of x[B,C,h,w].
template <typename T> Tensor<T> upsample_bilinear(const Tensor<T>& x, std::int64_t height, std::int64_t width);

/// softmax(q k^T * scale) v for q[G,N,dh], k[G,M,dh], v[G,M,dv]. Query rows
/// are processed in blocks and probabilities are recomputed during backward,
/// so memory stays O(G*N) beyond the inputs and output.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale);

/// The probability matrix softmax(q k^T * scale) as a plain [G,N,M] tensor.
template <typename T> Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, T scale);

}  // namespace amber
