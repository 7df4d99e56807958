#include "amber/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "amber/parallel.hpp"

namespace amber {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
NodeT<T>* raw(const Tensor<T>& t) {
    return t.defined() ? t.node().get() : nullptr;
}

template <typename T>
bool wants_grad(const NodeT<T>* n) {
    return n != nullptr && n->requires_grad;
}

// Eigen's vectorized reductions peel to the first aligned address, so their
// summation order (and last bit) depends on where the buffer happens to live
template <typename T>
T sequential_sum(const T* p, std::int64_t n) {
    T s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += p[i];
    return s;
}

// message is only built on failure
#define AMBER_REQUIRE(ok, msg) \
    do {                       \
        if (!(ok)) throw ShapeError(msg); \
    } while (0)

template <typename T>
void require_rank(const Tensor<T>& t, std::int64_t r, const char* op, const char* what) {
    AMBER_REQUIRE(t.defined() && t.rank() == r, std::string(op) + ": " + what + " must have rank " + std::to_string(r) +
                                              (t.defined() ? ", got " + shape_str(t.shape()) : ""));
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvSpec

ConvSpec ConvSpec::cube(std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t cin, std::int64_t cout) {
    return ConvSpec{{k, k, k}, {s, s, s}, {p, p, p}, cin, cout};
}

ConvSpec ConvSpec::planar(std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t cin, std::int64_t cout) {
    return ConvSpec{{1, k, k}, {1, s, s}, {0, p, p}, cin, cout};
}

void ConvSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        AMBER_REQUIRE(kernel[a] >= 1, "conv: kernel extents must be >= 1");
        AMBER_REQUIRE(stride[a] >= 1, "conv: stride must be >= 1");
        AMBER_REQUIRE(padding[a] >= 0, "conv: padding must be >= 0");
    }
    AMBER_REQUIRE(in_channels >= 1 && out_channels >= 1, "conv: channel counts must be >= 1");
}

std::int64_t ConvSpec::output_extent(int axis, std::int64_t n) const {
    const auto padded = n + 2 * padding[axis];
    if (padded < kernel[axis])
        throw ShapeError("conv: padded extent " + std::to_string(padded) + " smaller than kernel " +
                         std::to_string(kernel[axis]));
    return (padded - kernel[axis]) / stride[axis] + 1;
}

Extents3 ConvSpec::output_extents(const Extents3& in) const {
    return {output_extent(0, in.d), output_extent(1, in.h), output_extent(2, in.w)};
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    AMBER_REQUIRE(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto *an = raw(a), *bn = raw(b);
    return make_result<T>("add", a.shape(), std::move(out), {a, b}, [an, bn](NodeT<T>& self) {
        for (auto* n : {an, bn}) {
            if (!wants_grad(n)) continue;
            auto g = n->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    AMBER_REQUIRE(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto *an = raw(a), *bn = raw(b);
    return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [an, bn](NodeT<T>& self) {
        if (wants_grad(an)) {
            auto g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(bn)) {
            auto g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    AMBER_REQUIRE(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto *an = raw(a), *bn = raw(b);
    return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [an, bn](NodeT<T>& self) {
        if (wants_grad(an)) {
            auto g = an->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (wants_grad(bn)) {
            auto g = bn->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    auto* an = raw(a);
    return make_result<T>("scale", a.shape(), std::move(out), {a}, [an, factor](NodeT<T>& self) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total = 0;
    for (T v : a.data()) total += v;
    auto* an = raw(a);
    return make_result<T>("sum", Shape{}, {total}, {a}, [an](NodeT<T>& self) {
        auto g = an->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    AMBER_REQUIRE(a.numel() > 0, "mean: empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    AMBER_REQUIRE(shape_numel(shape) == a.numel(),
            "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    auto* an = raw(a);
    return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [an](NodeT<T>& self) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

namespace {

// Calls visit(out_index, in_index) over every element of a permuted copy.
template <typename F>
void permute_walk(const Shape& in_shape, const std::vector<int>& axes, F&& visit) {
    const std::size_t r = in_shape.size();
    std::vector<std::int64_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
    Shape out_shape(r);
    std::vector<std::int64_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
        step[i] = in_stride[static_cast<std::size_t>(axes[i])];
    }
    const auto n = shape_numel(in_shape);
    if (n == 0) return;
    if (r == 0) {
        visit(0, 0);
        return;
    }
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    const auto inner = out_shape[r - 1];
    const auto inner_step = step[r - 1];
    for (std::int64_t o = 0; o < n; o += inner) {
        for (std::int64_t j = 0; j < inner; ++j) visit(o + j, src + j * inner_step);
        // advance the odometer over all but the innermost axis
        for (std::size_t ax = r - 1; ax-- > 0;) {
            src += step[ax];
            if (++idx[ax] < out_shape[ax]) break;
            src -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
    const auto r = static_cast<std::size_t>(a.rank());
    AMBER_REQUIRE(axes.size() == r, "permute: axis list does not match rank");
    std::vector<bool> used(r, false);
    for (int ax : axes) {
        AMBER_REQUIRE(ax >= 0 && static_cast<std::size_t>(ax) < r && !used[static_cast<std::size_t>(ax)],
                "permute: axes must be a permutation");
        used[static_cast<std::size_t>(ax)] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[static_cast<std::size_t>(axes[i])];
    std::vector<T> out(static_cast<std::size_t>(a.numel()));
    auto in = a.data();
    permute_walk(a.shape(), axes, [&](std::int64_t o, std::int64_t i) { out[o] = in[i]; });
    auto* an = raw(a);
    Shape in_shape = a.shape();
    return make_result<T>("permute", std::move(out_shape), std::move(out), {a},
                          [an, in_shape, axes](NodeT<T>& self) {
                              auto g = an->grad_buffer();
                              permute_walk(in_shape, axes,
                                           [&](std::int64_t o, std::int64_t i) { g[i] += self.grad[o]; });
                          });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    AMBER_REQUIRE(!parts.empty(), "concat: no inputs");
    const auto& first = parts.front().shape();
    const auto r = static_cast<int>(first.size());
    if (axis < 0) axis += r;
    AMBER_REQUIRE(axis >= 0 && axis < r, "concat: axis out of range");
    std::int64_t outer = 1, inner = 1, total = 0;
    for (int i = 0; i < axis; ++i) outer *= first[i];
    for (int i = axis + 1; i < r; ++i) inner *= first[i];
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        AMBER_REQUIRE(p.rank() == r, "concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis)
                AMBER_REQUIRE(p.shape()[i] == first[i], "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                                      shape_str(first));
        widths.push_back(p.shape()[axis] * inner);
        total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    const auto row = total * inner;
    std::vector<T> out(static_cast<std::size_t>(outer * row));
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + o * widths[k], widths[k], out.begin() + o * row + offset);
        offset += widths[k];
    }
    std::vector<NodeT<T>*> nodes;
    for (const auto& p : parts) nodes.push_back(raw(p));
    return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                          [nodes, widths, outer, row](NodeT<T>& self) {
                              std::int64_t off = 0;
                              for (std::size_t k = 0; k < nodes.size(); ++k) {
                                  if (wants_grad(nodes[k])) {
                                      auto g = nodes[k]->grad_buffer();
                                      for (std::int64_t o = 0; o < outer; ++o)
                                          for (std::int64_t j = 0; j < widths[k]; ++j)
                                              g[o * widths[k] + j] += self.grad[o * row + off + j];
                                  }
                                  off += widths[k];
                              }
                          });
}

template <typename T>
Tensor<T> pad_tokens(const Tensor<T>& a, std::int64_t length) {
    require_rank(a, 3, "pad_tokens", "input");
    const auto B = a.dim(0), N = a.dim(1), C = a.dim(2);
    AMBER_REQUIRE(length >= N, "pad_tokens: target shorter than input");
    std::vector<T> out(static_cast<std::size_t>(B * length * C), T(0));
    auto in = a.data();
    for (std::int64_t b = 0; b < B; ++b)
        std::copy_n(in.begin() + b * N * C, N * C, out.begin() + b * length * C);
    auto* an = raw(a);
    return make_result<T>("pad_tokens", Shape{B, length, C}, std::move(out), {a},
                          [an, B, N, C, length](NodeT<T>& self) {
                              auto g = an->grad_buffer();
                              for (std::int64_t b = 0; b < B; ++b)
                                  for (std::int64_t j = 0; j < N * C; ++j)
                                      g[b * N * C + j] += self.grad[b * length * C + j];
                          });
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    require_rank(a, 3, "bmm", "lhs");
    require_rank(b, 3, "bmm", "rhs");
    const auto G = a.dim(0), M = a.dim(1), K = a.dim(2);
    const auto N = transpose_b ? b.dim(1) : b.dim(2);
    const auto Kb = transpose_b ? b.dim(2) : b.dim(1);
    AMBER_REQUIRE(b.dim(0) == G && Kb == K,
            "bmm: incompatible operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(static_cast<std::size_t>(G * M * N));
    for (std::int64_t g = 0; g < G; ++g) {
        CMatMap<T> A(a.data().data() + g * M * K, M, K);
        MatMap<T> C(out.data() + g * M * N, M, N);
        if (transpose_b)
            C.noalias() = A * CMatMap<T>(b.data().data() + g * N * K, N, K).transpose();
        else
            C.noalias() = A * CMatMap<T>(b.data().data() + g * K * N, K, N);
    }
    auto *an = raw(a), *bn = raw(b);
    return make_result<T>("bmm", Shape{G, M, N}, std::move(out), {a, b},
                          [an, bn, G, M, K, N, transpose_b](NodeT<T>& self) {
                              for (std::int64_t g = 0; g < G; ++g) {
                                  CMatMap<T> Gm(self.grad.data() + g * M * N, M, N);
                                  CMatMap<T> A(an->data.data() + g * M * K, M, K);
                                  if (transpose_b) {
                                      CMatMap<T> Bm(bn->data.data() + g * N * K, N, K);
                                      if (wants_grad(an))
                                          MatMap<T>(an->grad_buffer().data() + g * M * K, M, K).noalias() += Gm * Bm;
                                      if (wants_grad(bn))
                                          MatMap<T>(bn->grad_buffer().data() + g * N * K, N, K).noalias() +=
                                              Gm.transpose() * A;
                                  } else {
                                      CMatMap<T> Bm(bn->data.data() + g * K * N, K, N);
                                      if (wants_grad(an))
                                          MatMap<T>(an->grad_buffer().data() + g * M * K, M, K).noalias() +=
                                              Gm * Bm.transpose();
                                      if (wants_grad(bn))
                                          MatMap<T>(bn->grad_buffer().data() + g * K * N, K, N).noalias() +=
                                              A.transpose() * Gm;
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    AMBER_REQUIRE(x.defined() && x.rank() >= 1, "linear: input must have rank >= 1");
    require_rank(w, 2, "linear", "weight");
    const auto Cin = w.dim(0), Cout = w.dim(1);
    AMBER_REQUIRE(x.dim(-1) == Cin, "linear: input last axis " + std::to_string(x.dim(-1)) + " != weight rows " +
                                  std::to_string(Cin));
    if (b.defined()) AMBER_REQUIRE(b.rank() == 1 && b.dim(0) == Cout, "linear: bias must be [Cout]");
    const auto M = x.numel() / Cin;
    Shape out_shape = x.shape();
    out_shape.back() = Cout;
    std::vector<T> out(static_cast<std::size_t>(M * Cout));
    MatMap<T> Y(out.data(), M, Cout);
    Y.noalias() = CMatMap<T>(x.data().data(), M, Cin) * CMatMap<T>(w.data().data(), Cin, Cout);
    if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), Cout);
    auto *xn = raw(x), *wn = raw(w), *bn = raw(b);
    std::vector<Tensor<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result<T>("linear", std::move(out_shape), std::move(out), std::move(inputs),
                          [xn, wn, bn, M, Cin, Cout](NodeT<T>& self) {
                              CMatMap<T> G(self.grad.data(), M, Cout);
                              if (wants_grad(xn))
                                  MatMap<T>(xn->grad_buffer().data(), M, Cin).noalias() +=
                                      G * CMatMap<T>(wn->data.data(), Cin, Cout).transpose();
                              if (wants_grad(wn))
                                  MatMap<T>(wn->grad_buffer().data(), Cin, Cout).noalias() +=
                                      CMatMap<T>(xn->data.data(), M, Cin).transpose() * G;
                              if (wants_grad(bn)) {
                                  auto gb = bn->grad_buffer();
                                  for (std::int64_t m = 0; m < M; ++m)
                                      for (std::int64_t o = 0; o < Cout; ++o) gb[o] += self.grad[m * Cout + o];
                              }
                          });
}

// ---------------------------------------------------------------------------
// Normalization and activations

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    AMBER_REQUIRE(x.defined() && x.rank() >= 1, "layer_norm: input must have rank >= 1");
    const auto C = x.dim(-1);
    AMBER_REQUIRE(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
            "layer_norm: gamma/beta must be [" + std::to_string(C) + "]");
    const auto M = x.numel() / C;
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto xhat = std::make_shared<std::vector<T>>(out.size());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(M));
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::int64_t m = 0; m < M; ++m) {
        const T* row = xd.data() + m * C;
        double s = 0;
        for (std::int64_t c = 0; c < C; ++c) s += row[c];
        const double mu = s / static_cast<double>(C);
        double v = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double dlt = static_cast<double>(row[c]) - mu;
            v += dlt * dlt;
        }
        v /= static_cast<double>(C);
        const double r = 1.0 / std::sqrt(v + static_cast<double>(eps));
        (*rstd)[m] = static_cast<T>(r);
        for (std::int64_t c = 0; c < C; ++c) {
            const T h = static_cast<T>((static_cast<double>(row[c]) - mu) * r);
            (*xhat)[m * C + c] = h;
            out[m * C + c] = h * gd[c] + bd[c];
        }
    }
    auto *xn = raw(x), *gn = raw(gamma), *bn = raw(beta);
    return make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta}, [xn, gn, bn, xhat, rstd, M, C](NodeT<T>& self) {
            const T* g = self.grad.data();
            if (wants_grad(gn)) {
                auto gg = gn->grad_buffer();
                for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t c = 0; c < C; ++c) gg[c] += g[m * C + c] * (*xhat)[m * C + c];
            }
            if (wants_grad(bn)) {
                auto gb = bn->grad_buffer();
                for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t c = 0; c < C; ++c) gb[c] += g[m * C + c];
            }
            if (wants_grad(xn)) {
                auto gx = xn->grad_buffer();
                const T* gam = gn->data.data();
                for (std::int64_t m = 0; m < M; ++m) {
                    double a = 0, b = 0;
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double gh = static_cast<double>(g[m * C + c]) * gam[c];
                        a += gh;
                        b += gh * (*xhat)[m * C + c];
                    }
                    a /= static_cast<double>(C);
                    b /= static_cast<double>(C);
                    const double r = (*rstd)[m];
                    for (std::int64_t c = 0; c < C; ++c) {
                        const double gh = static_cast<double>(g[m * C + c]) * gam[c];
                        gx[m * C + c] += static_cast<T>(r * (gh - a - (*xhat)[m * C + c] * b));
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.data().begin(), x.data().end());
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    auto* xn = raw(x);
    return make_result<T>("gelu", x.shape(), std::move(out), {x}, [xn](NodeT<T>& self) {
        constexpr T inv_sqrt2pi = T(0.39894228040143267794);
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xn->data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const auto r = static_cast<int>(x.rank());
    if (axis < 0) axis += r;
    AMBER_REQUIRE(axis >= 0 && axis < r, "softmax: axis out of range");
    std::int64_t outer = 1, inner = 1;
    const auto n = x.shape()[static_cast<std::size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            T mx = xd[base];
            for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, xd[base + k * inner]);
            T s = 0;
            for (std::int64_t k = 0; k < n; ++k) {
                const T e = std::exp(xd[base + k * inner] - mx);
                out[base + k * inner] = e;
                s += e;
            }
            for (std::int64_t k = 0; k < n; ++k) out[base + k * inner] /= s;
        }
    auto* xn = raw(x);
    return make_result<T>("softmax", x.shape(), std::move(out), {x}, [xn, outer, inner, n](NodeT<T>& self) {
        auto g = xn->grad_buffer();
        const T* y = self.data.data();
        const T* gy = self.grad.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = o * n * inner + i;
                T dot = 0;
                for (std::int64_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
                for (std::int64_t k = 0; k < n; ++k) g[base + k * inner] += y[base + k * inner] * (gy[base + k * inner] - dot);
            }
    });
}

// ---------------------------------------------------------------------------
// Convolution (window gathering + GEMM)

namespace {

struct ConvGeometry {
    std::int64_t batch, cin, cout;
    Extents3 in, out;
    std::array<std::int64_t, 3> k, s, p;

    std::int64_t kvol() const { return k[0] * k[1] * k[2]; }
    std::int64_t rows() const { return cin * kvol(); }
};

// cols[(c,kd,kh,kw), (od,oh,ow)] = x[c, od*s-p+kd, ...] or 0 outside the input.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const auto P = g.out.count();
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < g.cin; ++c)
        for (std::int64_t kd = 0; kd < g.k[0]; ++kd)
            for (std::int64_t kh = 0; kh < g.k[1]; ++kh)
                for (std::int64_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    T* dst = cols + row * P;
                    for (std::int64_t od = 0; od < g.out.d; ++od) {
                        const auto id = od * g.s[0] - g.p[0] + kd;
                        for (std::int64_t oh = 0; oh < g.out.h; ++oh) {
                            const auto ih = oh * g.s[1] - g.p[1] + kh;
                            T* line = dst + (od * g.out.h + oh) * g.out.w;
                            if (id < 0 || id >= g.in.d || ih < 0 || ih >= g.in.h) {
                                std::fill_n(line, g.out.w, T(0));
                                continue;
                            }
                            const T* src = x + ((c * g.in.d + id) * g.in.h + ih) * g.in.w;
                            for (std::int64_t ow = 0; ow < g.out.w; ++ow) {
                                const auto iw = ow * g.s[2] - g.p[2] + kw;
                                line[ow] = (iw >= 0 && iw < g.in.w) ? src[iw] : T(0);
                            }
                        }
                    }
                }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* gx) {
    const auto P = g.out.count();
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < g.cin; ++c)
        for (std::int64_t kd = 0; kd < g.k[0]; ++kd)
            for (std::int64_t kh = 0; kh < g.k[1]; ++kh)
                for (std::int64_t kw = 0; kw < g.k[2]; ++kw, ++row) {
                    const T* srcrow = cols + row * P;
                    for (std::int64_t od = 0; od < g.out.d; ++od) {
                        const auto id = od * g.s[0] - g.p[0] + kd;
                        if (id < 0 || id >= g.in.d) continue;
                        for (std::int64_t oh = 0; oh < g.out.h; ++oh) {
                            const auto ih = oh * g.s[1] - g.p[1] + kh;
                            if (ih < 0 || ih >= g.in.h) continue;
                            const T* line = srcrow + (od * g.out.h + oh) * g.out.w;
                            T* dst = gx + ((c * g.in.d + id) * g.in.h + ih) * g.in.w;
                            for (std::int64_t ow = 0; ow < g.out.w; ++ow) {
                                const auto iw = ow * g.s[2] - g.p[2] + kw;
                                if (iw >= 0 && iw < g.in.w) dst[iw] += line[ow];
                            }
                        }
                    }
                }
}

template <typename T>
Tensor<T> conv_impl(const char* op, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                    const ConvGeometry& g, Shape out_shape) {
    const auto P = g.out.count();
    const auto R = g.rows();
    const auto in_vol = g.cin * g.in.count();
    const auto out_vol = g.cout * P;
    std::vector<T> out(static_cast<std::size_t>(g.batch * out_vol));
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    const T* bd = b.defined() ? b.data().data() : nullptr;
    parallel_for(g.batch, [&](std::int64_t n) {
        std::vector<T> cols(static_cast<std::size_t>(R * P));
        im2col(xd + n * in_vol, g, cols.data());
        MatMap<T> Y(out.data() + n * out_vol, g.cout, P);
        Y.noalias() = CMatMap<T>(wd, g.cout, R) * CMatMap<T>(cols.data(), R, P);
        if (bd)
            for (std::int64_t o = 0; o < g.cout; ++o) Y.row(o).array() += bd[o];
    });
    auto *xn = raw(x), *wn = raw(w), *bn = raw(b);
    std::vector<Tensor<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result<T>(op, std::move(out_shape), std::move(out), std::move(inputs),
                          [xn, wn, bn, g, P, R, in_vol, out_vol](NodeT<T>& self) {
                              std::vector<T> cols(static_cast<std::size_t>(R * P));
                              for (std::int64_t n = 0; n < g.batch; ++n) {
                                  CMatMap<T> G(self.grad.data() + n * out_vol, g.cout, P);
                                  if (wants_grad(bn)) {
                                      auto gb = bn->grad_buffer();
                                      for (std::int64_t o = 0; o < g.cout; ++o)
                                          gb[o] += sequential_sum(self.grad.data() + n * out_vol + o * P, P);
                                  }
                                  if (wants_grad(wn)) {
                                      im2col(xn->data.data() + n * in_vol, g, cols.data());
                                      MatMap<T>(wn->grad_buffer().data(), g.cout, R).noalias() +=
                                          G * CMatMap<T>(cols.data(), R, P).transpose();
                                  }
                                  if (wants_grad(xn)) {
                                      MatMap<T>(cols.data(), R, P).noalias() =
                                          CMatMap<T>(wn->data.data(), g.cout, R).transpose() * G;
                                      col2im(cols.data(), g, xn->grad_buffer().data() + n * in_vol);
                                  }
                              }
                          });
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec) {
    spec.validate();
    require_rank(x, 5, "conv3d", "input");
    require_rank(w, 5, "conv3d", "weight");
    const Shape expect_w{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]};
    AMBER_REQUIRE(w.shape() == expect_w, "conv3d: weight " + shape_str(w.shape()) + " does not match spec " +
                                       shape_str(expect_w));
    AMBER_REQUIRE(x.dim(1) == spec.in_channels, "conv3d: input has " + std::to_string(x.dim(1)) + " channels, spec " +
                                              std::to_string(spec.in_channels));
    if (b.defined()) AMBER_REQUIRE(b.rank() == 1 && b.dim(0) == spec.out_channels, "conv3d: bias must be [Cout]");
    ConvGeometry g{x.dim(0), spec.in_channels, spec.out_channels, {x.dim(2), x.dim(3), x.dim(4)}, {},
                   spec.kernel, spec.stride, spec.padding};
    g.out = spec.output_extents(g.in);
    return conv_impl("conv3d", x, w, b, g, Shape{g.batch, g.cout, g.out.d, g.out.h, g.out.w});
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec) {
    spec.validate();
    AMBER_REQUIRE(spec.kernel[0] == 1 && spec.stride[0] == 1 && spec.padding[0] == 0, "conv2d: spec must be planar");
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "weight");
    const Shape expect_w{spec.out_channels, spec.in_channels, spec.kernel[1], spec.kernel[2]};
    AMBER_REQUIRE(w.shape() == expect_w, "conv2d: weight " + shape_str(w.shape()) + " does not match spec " +
                                       shape_str(expect_w));
    AMBER_REQUIRE(x.dim(1) == spec.in_channels, "conv2d: input has " + std::to_string(x.dim(1)) + " channels, spec " +
                                              std::to_string(spec.in_channels));
    if (b.defined()) AMBER_REQUIRE(b.rank() == 1 && b.dim(0) == spec.out_channels, "conv2d: bias must be [Cout]");
    ConvGeometry g{x.dim(0), spec.in_channels, spec.out_channels, {1, x.dim(2), x.dim(3)}, {},
                   spec.kernel, spec.stride, spec.padding};
    g.out = spec.output_extents(g.in);
    return conv_impl("conv2d", x, w, b, g, Shape{g.batch, g.cout, g.out.h, g.out.w});
}

template <typename T>
Tensor<T> depthwise_conv3d(const Tensor<T>& x, const Extents3& grid, const Tensor<T>& w, const Tensor<T>& b) {
    require_rank(x, 3, "depthwise_conv3d", "input");
    const auto B = x.dim(0), N = x.dim(1), C = x.dim(2);
    AMBER_REQUIRE(N == grid.count(), "depthwise_conv3d: token count " + std::to_string(N) + " != grid volume " +
                                   std::to_string(grid.count()));
    AMBER_REQUIRE((w.shape() == Shape{3, 3, 3, C}), "depthwise_conv3d: weight must be [3,3,3,C]");
    AMBER_REQUIRE(b.defined() && b.shape() == Shape{C}, "depthwise_conv3d: bias must be [C]");

    // Calls tap(out_voxel, in_voxel, tap_index) for every in-bounds neighbour.
    auto walk = [grid](auto&& tap) {
        for (std::int64_t d = 0; d < grid.d; ++d)
            for (std::int64_t h = 0; h < grid.h; ++h)
                for (std::int64_t wi = 0; wi < grid.w; ++wi) {
                    const auto v = (d * grid.h + h) * grid.w + wi;
                    for (std::int64_t kd = 0; kd < 3; ++kd) {
                        const auto sd = d + kd - 1;
                        if (sd < 0 || sd >= grid.d) continue;
                        for (std::int64_t kh = 0; kh < 3; ++kh) {
                            const auto sh = h + kh - 1;
                            if (sh < 0 || sh >= grid.h) continue;
                            for (std::int64_t kw = 0; kw < 3; ++kw) {
                                const auto sw = wi + kw - 1;
                                if (sw < 0 || sw >= grid.w) continue;
                                tap(v, (sd * grid.h + sh) * grid.w + sw, (kd * 3 + kh) * 3 + kw);
                            }
                        }
                    }
                }
    };

    std::vector<T> out(static_cast<std::size_t>(B * N * C));
    const T* xd = x.data().data();
    const T* wd = w.data().data();
    const T* bd = b.data().data();
    parallel_for(B, [&](std::int64_t n) {
        T* yb = out.data() + n * N * C;
        const T* xb = xd + n * N * C;
        for (std::int64_t v = 0; v < N; ++v) std::copy_n(bd, C, yb + v * C);
        walk([&](std::int64_t v, std::int64_t s, std::int64_t t) {
            T* y = yb + v * C;
            const T* xs = xb + s * C;
            const T* wt = wd + t * C;
            for (std::int64_t c = 0; c < C; ++c) y[c] += wt[c] * xs[c];
        });
    });
    auto *xn = raw(x), *wn = raw(w), *bn = raw(b);
    return make_result<T>("depthwise_conv3d", x.shape(), std::move(out), {x, w, b},
                          [xn, wn, bn, walk, B, N, C](NodeT<T>& self) {
                              T* gx = wants_grad(xn) ? xn->grad_buffer().data() : nullptr;
                              T* gw = wants_grad(wn) ? wn->grad_buffer().data() : nullptr;
                              if (wants_grad(bn)) {
                                  auto gb = bn->grad_buffer();
                                  for (std::int64_t i = 0; i < B * N; ++i)
                                      for (std::int64_t c = 0; c < C; ++c) gb[c] += self.grad[i * C + c];
                              }
                              for (std::int64_t n = 0; n < B; ++n) {
                                  const T* gy = self.grad.data() + n * N * C;
                                  const T* xb = xn->data.data() + n * N * C;
                                  walk([&](std::int64_t v, std::int64_t s, std::int64_t t) {
                                      const T* g = gy + v * C;
                                      if (gx) {
                                          T* dst = gx + n * N * C + s * C;
                                          const T* wt = wn->data.data() + t * C;
                                          for (std::int64_t c = 0; c < C; ++c) dst[c] += wt[c] * g[c];
                                      }
                                      if (gw) {
                                          T* dw = gw + t * C;
                                          const T* xs = xb + s * C;
                                          for (std::int64_t c = 0; c < C; ++c) dw[c] += xs[c] * g[c];
                                      }
                                  });
                              }
                          });
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

template <typename T>
struct AxisTaps {
    std::vector<std::int64_t> lo, hi;
    std::vector<T> wlo, whi;
};

// Half-pixel source coordinate, clamped at the low border.
template <typename T>
AxisTaps<T> axis_taps(std::int64_t in, std::int64_t out) {
    AxisTaps<T> t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.wlo.resize(out);
    t.whi.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const auto i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - static_cast<double>(i0);
        t.lo[i] = i0;
        t.hi[i] = i1;
        t.whi[i] = static_cast<T>(l1);
        t.wlo[i] = static_cast<T>(1.0 - l1);
    }
    return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& x, const Extents3& target) {
    require_rank(x, 5, "upsample_trilinear", "input");
    AMBER_REQUIRE(target.d >= 1 && target.h >= 1 && target.w >= 1, "upsample_trilinear: empty target");
    const auto BC = x.dim(0) * x.dim(1);
    const Extents3 src{x.dim(2), x.dim(3), x.dim(4)};
    Shape out_shape{x.dim(0), x.dim(1), target.d, target.h, target.w};
    if (src == target) return reshape(x, out_shape);

    const auto td = axis_taps<T>(src.d, target.d);
    const auto th = axis_taps<T>(src.h, target.h);
    const auto tw = axis_taps<T>(src.w, target.w);
    const auto in_vol = src.count();
    const auto out_vol = target.count();

    // visit(out_offset, in_offset, weight) for the 8 corners of each output voxel
    auto walk = [=](auto&& visit) {
        for (std::int64_t bc = 0; bc < BC; ++bc) {
            const auto ib = bc * in_vol;
            const auto ob = bc * out_vol;
            for (std::int64_t d = 0; d < target.d; ++d) {
                const std::int64_t ds[2] = {td.lo[d], td.hi[d]};
                const T dw[2] = {td.wlo[d], td.whi[d]};
                for (std::int64_t h = 0; h < target.h; ++h) {
                    const std::int64_t hs[2] = {th.lo[h], th.hi[h]};
                    const T hw[2] = {th.wlo[h], th.whi[h]};
                    for (std::int64_t w = 0; w < target.w; ++w) {
                        const std::int64_t ws[2] = {tw.lo[w], tw.hi[w]};
                        const T ww[2] = {tw.wlo[w], tw.whi[w]};
                        const auto o = ob + (d * target.h + h) * target.w + w;
                        for (int a = 0; a < 2; ++a)
                            for (int bb = 0; bb < 2; ++bb)
                                for (int c = 0; c < 2; ++c)
                                    visit(o, ib + (ds[a] * src.h + hs[bb]) * src.w + ws[c], dw[a] * hw[bb] * ww[c]);
                    }
                }
            }
        }
    };
    std::vector<T> out(static_cast<std::size_t>(BC * out_vol), T(0));
    const T* xd = x.data().data();
    walk([&](std::int64_t o, std::int64_t i, T wgt) { out[o] += wgt * xd[i]; });
    auto* xn = raw(x);
    return make_result<T>("upsample_trilinear", std::move(out_shape), std::move(out), {x}, [xn, walk](NodeT<T>& self) {
        T* g = xn->grad_buffer().data();
        walk([&](std::int64_t o, std::int64_t i, T wgt) { g[i] += wgt * self.grad[o]; });
    });
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::int64_t height, std::int64_t width) {
    require_rank(x, 4, "upsample_bilinear", "input");
    auto x5 = reshape(x, Shape{x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
    auto y5 = upsample_trilinear(x5, Extents3{1, height, width});
    return reshape(y5, Shape{x.dim(0), x.dim(1), height, width});
}

// ---------------------------------------------------------------------------
// Attention

namespace {
constexpr std::int64_t kQueryBlock = 128;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale) {
    require_rank(q, 3, "attention", "q");
    require_rank(k, 3, "attention", "k");
    require_rank(v, 3, "attention", "v");
    const auto G = q.dim(0), N = q.dim(1), dh = q.dim(2);
    const auto M = k.dim(1), dv = v.dim(2);
    AMBER_REQUIRE(k.dim(0) == G && v.dim(0) == G && k.dim(2) == dh && v.dim(1) == M,
            "attention: incompatible q/k/v " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " +
                shape_str(v.shape()));
    AMBER_REQUIRE(M >= 1, "attention: empty key sequence");

    std::vector<T> out(static_cast<std::size_t>(G * N * dv));
    auto lse = std::make_shared<std::vector<T>>(static_cast<std::size_t>(G * N));
    const T* qd = q.data().data();
    const T* kd = k.data().data();
    const T* vd = v.data().data();
    parallel_for(G, [&](std::int64_t g) {
        CMatMap<T> K(kd + g * M * dh, M, dh);
        CMatMap<T> V(vd + g * M * dv, M, dv);
        Mat<T> S;
        for (std::int64_t r0 = 0; r0 < N; r0 += kQueryBlock) {
            const auto rows = std::min(kQueryBlock, N - r0);
            CMatMap<T> Q(qd + (g * N + r0) * dh, rows, dh);
            S.noalias() = (Q * K.transpose()) * scale;
            for (std::int64_t i = 0; i < rows; ++i) {
                auto row = S.row(i).array();
                const T mx = row.maxCoeff();
                row = (row - mx).exp();
                const T l = row.sum();
                row /= l;
                (*lse)[g * N + r0 + i] = mx + std::log(l);
            }
            MatMap<T>(out.data() + (g * N + r0) * dv, rows, dv).noalias() = S * V;
        }
    });
    auto *qn = raw(q), *kn = raw(k), *vn = raw(v);
    return make_result<T>(
        "attention", Shape{G, N, dv}, std::move(out), {q, k, v},
        [qn, kn, vn, lse, G, N, M, dh, dv, scale](NodeT<T>& self) {
            const bool gq = wants_grad(qn), gk = wants_grad(kn), gv = wants_grad(vn);
            T* dq = gq ? qn->grad_buffer().data() : nullptr;
            T* dk = gk ? kn->grad_buffer().data() : nullptr;
            T* dvp = gv ? vn->grad_buffer().data() : nullptr;
            parallel_for(G, [&](std::int64_t g) {
                CMatMap<T> K(kn->data.data() + g * M * dh, M, dh);
                CMatMap<T> V(vn->data.data() + g * M * dv, M, dv);
                Mat<T> P, dP;
                for (std::int64_t r0 = 0; r0 < N; r0 += kQueryBlock) {
                    const auto rows = std::min(kQueryBlock, N - r0);
                    CMatMap<T> Q(qn->data.data() + (g * N + r0) * dh, rows, dh);
                    CMatMap<T> O(self.data.data() + (g * N + r0) * dv, rows, dv);
                    CMatMap<T> dO(self.grad.data() + (g * N + r0) * dv, rows, dv);
                    P.noalias() = (Q * K.transpose()) * scale;
                    for (std::int64_t i = 0; i < rows; ++i)
                        P.row(i) = (P.row(i).array() - (*lse)[g * N + r0 + i]).exp().matrix();
                    if (gv) MatMap<T>(dvp + g * M * dv, M, dv).noalias() += P.transpose() * dO;
                    if (!gq && !gk) continue;
                    dP.noalias() = dO * V.transpose();
                    for (std::int64_t i = 0; i < rows; ++i) {
                        const T D = O.row(i).dot(dO.row(i));
                        dP.row(i) = (P.row(i).array() * (dP.row(i).array() - D)).matrix();
                    }
                    // dP now holds dS, the gradient w.r.t. the pre-softmax scores
                    if (gq) MatMap<T>(dq + (g * N + r0) * dh, rows, dh).noalias() += (dP * K) * scale;
                    if (gk) MatMap<T>(dk + g * M * dh, M, dh).noalias() += (dP.transpose() * Q) * scale;
                }
            });
        });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, T factor) {
    NoGradGuard guard;
    return softmax(amber::scale(bmm(q, k, true), factor), -1);
}

// Explicit instantiations

#define AMBER_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> scale(const Tensor<T>&, T);                                                            \
    template Tensor<T> sum(const Tensor<T>&);                                                                 \
    template Tensor<T> mean(const Tensor<T>&);                                                                \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                                    \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                            \
    template Tensor<T> pad_tokens(const Tensor<T>&, std::int64_t);                                            \
    template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                         \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
    template Tensor<T> gelu(const Tensor<T>&);                                                                \
    template Tensor<T> softmax(const Tensor<T>&, int);                                                        \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);         \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);         \
    template Tensor<T> depthwise_conv3d(const Tensor<T>&, const Extents3&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> upsample_trilinear(const Tensor<T>&, const Extents3&);                                 \
    template Tensor<T> upsample_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);                       \
    template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                    \
    template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, T);

AMBER_INSTANTIATE_OPS(float)
AMBER_INSTANTIATE_OPS(double)

}  // namespace amber
