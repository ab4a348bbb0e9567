#include "daft/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace daft {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw ShapeError("shape entries must be positive, got " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& data, const char* op) {
    // A single accumulator pass: any NaN/Inf in the buffer poisons the sum.
    double acc = 0.0;
    for (const T v : data) acc += std::fabs(static_cast<double>(v));
    if (!std::isfinite(acc)) {
        throw NumericalError(std::string(op) + " produced a non-finite value");
    }
}

template <typename T>
bool any_requires_grad(const std::vector<std::shared_ptr<Node<T>>>& inputs) {
    for (const auto& in : inputs) {
        if (in && in->requires_grad) return true;
    }
    return false;
}

template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> data,
                    std::vector<std::shared_ptr<Node<T>>> inputs,
                    std::function<void(Node<T>&)> backprop) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError(std::string(op) + ": data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    check_finite(data, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (any_requires_grad(inputs)) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backprop = std::move(backprop);
    }
    return Tensor<T>::wrap(std::move(node));
}

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    // Iterative DFS; children (inputs) are emitted before their consumers.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    struct Frame {
        Node<T>* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_input < top.node->inputs.size()) {
            Node<T>* child = top.node->inputs[top.next_input++].get();
            if (child && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    const std::int64_t n = shape_numel(shape);
    if (data.empty()) data.assign(static_cast<std::size_t>(n), T(0));
    if (static_cast<std::int64_t>(data.size()) != n) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    detail::check_finite(data, "from_data");
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return from_data({}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(node_->shape));
    }
    return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::data_mut() {
    if (!node_->is_leaf()) {
        throw Error("data_mut is only valid on leaf tensors (op: " + std::string(node_->op) + ")");
    }
    return {node_->data.data(), node_->data.size()};
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, shape is " +
                         shape_to_string(node_->shape));
    }
    return node_->data[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) {
        throw Error("gradient not populated; run backward first (op: " +
                    std::string(node_->op) + ")");
    }
    return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
    node_->grad.assign(node_->data.size(), T(0));
    node_->grad_ready = false;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
    if (!node_->is_leaf()) {
        throw Error("set_requires_grad is only valid on leaf tensors");
    }
    node_->requires_grad = value;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw Error("backward on an undefined tensor");
    if (loss.numel() != 1 || loss.ndim() > 1) {
        throw ShapeError("backward requires a scalar loss of shape [] or [1], got " +
                         shape_to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw Error("backward: loss does not depend on any tensor with requires_grad");
    }
    auto order = detail::topo_order(loss.node());
    for (auto* node : order) {
        if (node->is_leaf() && node->requires_grad && node->grad_ready) {
            throw Error("backward already populated gradients for this graph; "
                        "call zero_grad before the next backward pass");
        }
    }
    for (auto* node : order) node->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* node = *it;
        if (node->backprop) node->backprop(*node);
    }
    for (auto* node : order) {
        if (node->is_leaf() && node->requires_grad) node->grad_ready = true;
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

namespace detail {
template void check_finite(const std::vector<float>&, const char*);
template void check_finite(const std::vector<double>&, const char*);
template bool any_requires_grad(const std::vector<std::shared_ptr<Node<float>>>&);
template bool any_requires_grad(const std::vector<std::shared_ptr<Node<double>>>&);
template Tensor<float> make_node(const char*, Shape, std::vector<float>,
                                 std::vector<std::shared_ptr<Node<float>>>,
                                 std::function<void(Node<float>&)>);
template Tensor<double> make_node(const char*, Shape, std::vector<double>,
                                  std::vector<std::shared_ptr<Node<double>>>,
                                  std::function<void(Node<double>&)>);
template std::vector<Node<float>*> topo_order(Node<float>*);
template std::vector<Node<double>*> topo_order(Node<double>*);
}  // namespace detail

}  // namespace daft
