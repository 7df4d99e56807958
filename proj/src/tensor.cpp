#include "amber/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace amber {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative axis length in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node<T>>()) {
    const auto n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->data.assign(static_cast<std::size_t>(n), T(0));
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::int64_t axis) const {
    const auto r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
    if (!node_->is_leaf) throw GraphError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw GraphError("tensor has no gradient buffer");
    return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_->grad.size() == node_->data.size())
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->data);
}

template <typename T>
ComputationTape<T> build_tape(const Tensor<T>& root) {
    ComputationTape<T> tape;
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order DFS; a node is emitted after all of its inputs.
    std::vector<std::pair<const detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const detail::Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            tape.nodes.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void Tensor<T>::backward() const {
    if (!node_) throw GraphError("backward() on undefined tensor");
    if (numel() != 1)
        throw GraphError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) throw GraphError("backward() on a tensor detached from any tracked leaf");

    auto tape = build_tape(*this);
    for (auto* n : tape.nodes) {
        auto* node = const_cast<detail::Node<T>*>(n);
        if (!node->is_leaf) node->grad.assign(node->data.size(), T(0));
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
        auto* node = const_cast<detail::Node<T>*>(*it);
        if (node->is_leaf || !node->backward_fn) continue;
        node->backward_fn(*node);
        // intermediate grads are consumed exactly once
        std::vector<T>().swap(node->grad);
    }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward) {
#ifndef NDEBUG
    for (const T& v : values)
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
#endif
    Tensor<T> out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool track = false;
    for (const auto& in : inputs) track = track || in.requires_grad();
    if (!track) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    node.op = op;
    node.backward_fn = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node());
    return out;
}

template class Tensor<float>;
template class Tensor<double>;
template ComputationTape<float> build_tape(const Tensor<float>&);
template ComputationTape<double> build_tape(const Tensor<double>&);
template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);

}  // namespace amber
