#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "amber/ops.hpp"
#include "amber/rng.hpp"
#include "amber/tensor.hpp"

namespace amber {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in row-major order.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng)
        : weight(fan_in_uniform<T>({in, out}, in, rng)), bias(Shape{out}, true) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    T eps = T(1e-6);

    LayerNorm() = default;
    explicit LayerNorm(std::int64_t channels)
        : gamma(Tensor<T>::full({channels}, T(1), true)), beta(Shape{channels}, true) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

template <typename T>
struct Conv3d {
    ConvSpec spec;
    Tensor<T> weight;  // [out, in, kd, kh, kw]
    Tensor<T> bias;    // [out]

    Conv3d() = default;
    Conv3d(const ConvSpec& s, Rng& rng)
        : spec(s),
          weight(fan_in_uniform<T>({s.out_channels, s.in_channels, s.kernel[0], s.kernel[1], s.kernel[2]},
                                   s.in_channels * s.kernel[0] * s.kernel[1] * s.kernel[2], rng)),
          bias(Shape{s.out_channels}, true) {
        spec.validate();
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, spec); }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct Conv2d {
    ConvSpec spec;
    Tensor<T> weight;  // [out, in, kh, kw]
    Tensor<T> bias;

    Conv2d() = default;
    Conv2d(const ConvSpec& s, Rng& rng)
        : spec(s),
          weight(fan_in_uniform<T>({s.out_channels, s.in_channels, s.kernel[1], s.kernel[2]},
                                   s.in_channels * s.kernel[1] * s.kernel[2], rng)),
          bias(Shape{s.out_channels}, true) {
        spec.validate();
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, spec); }

    void collect(NamedParams<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// [B,C,D,H,W] -> [B,D*H*W,C]
template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& x) {
    const auto B = x.dim(0), C = x.dim(1);
    const auto N = x.dim(2) * x.dim(3) * x.dim(4);
    return reshape(permute(x, {0, 2, 3, 4, 1}), Shape{B, N, C});
}

/// [B,N,C] -> [B,C,D,H,W]
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, const Extents3& grid) {
    const auto B = tokens.dim(0), C = tokens.dim(2);
    if (tokens.dim(1) != grid.count())
        throw ShapeError("tokens_to_grid: " + std::to_string(tokens.dim(1)) + " tokens for grid of " +
                         std::to_string(grid.count()));
    return permute(reshape(tokens, Shape{B, grid.d, grid.h, grid.w, C}), {0, 4, 1, 2, 3});
}

}  // namespace amber
