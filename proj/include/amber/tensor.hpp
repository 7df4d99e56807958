#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace amber {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes violate an op's precondition.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Raised by backward() when the graph cannot be differentiated.
class GraphError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

/// Non-finite value produced by a forward op (debug builds only).
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads `self.grad` and accumulates into the grad buffers of `inputs`.
    std::function<void(Node& self)> backward_fn;

    std::span<T> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <typename T>
class Tensor;

/// Reverse topological order is the backward schedule; this is the forward one.
template <typename T>
struct ComputationTape {
    std::vector<const detail::Node<T>*> nodes;
};

template <typename T>
ComputationTape<T> build_tape(const Tensor<T>& root);

/// Dense row-major tensor handle. Copies share storage and graph position,
/// like a reference-counted view onto one autodiff node.
template <typename T>
class Tensor {
   public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
    /// Axis length; negative indices count from the back.
    std::int64_t dim(std::int64_t axis) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on);
    bool is_leaf() const { return node_->is_leaf; }
    bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
    std::span<const T> grad() const;
    std::span<T> grad_mut() { return node_->grad_buffer(); }
    void zero_grad();

    /// Same values, fresh leaf outside any graph.
    Tensor detach() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(node_->shape, std::move(out));
    }

    /// Populates grad on every requires_grad leaf reachable from this scalar.
    void backward() const;

    const NodePtr& node() const { return node_; }
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

   private:
    NodePtr node_;
};

/// Creates an op result. Records `backward` and `inputs` on the tape only when
/// grad mode is on and at least one input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace amber
