#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "daft/error.hpp"
#include "daft/rng.hpp"

namespace daft {

/// Row-major tensor shape. Every entry must be positive; the empty shape
/// denotes a rank-0 scalar with one element.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

/// One node of the compute graph: the op tag, the strong references to the
/// input nodes, the output buffer, and the closure that pushes this node's
/// gradient into its inputs. Nodes form a DAG; `backward` walks it once in
/// reverse topological order.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    bool grad_ready = false;  // leaves only: set by backward, cleared by zero_grad
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backprop;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_leaf() const { return inputs.empty() && !backprop; }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root);

}  // namespace detail

/// Dense N-dimensional array with optional gradient. Copying a Tensor copies
/// the handle, not the buffer; buffers are immutable once created except for
/// gradients and explicit leaf mutation by optimizers.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value);
    /// Normal(0, stddev^2) entries drawn from `rng`.
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::int64_t dim(std::size_t axis) const;
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf(); }
    const char* op_name() const { return node_->op; }

    std::span<const T> data() const { return {node_->data.data(), node_->data.size()}; }
    /// Mutable access to a leaf's buffer (optimizer updates, initialization).
    std::span<T> data_mut();
    T item() const;

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const T> grad() const;
    /// Clears the gradient buffer and re-arms the tensor for a fresh backward.
    void zero_grad();
    /// Leaves only; used to freeze parameters.
    void set_requires_grad(bool value);

    detail::Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node<T>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

/// Reverse-mode sweep from a scalar loss. Populates `grad` on every
/// requires_grad leaf reachable from `loss`. Calling backward again through
/// any of those leaves without zero_grad in between is an error; gradients
/// never accumulate silently across separate backward passes.
template <typename T>
void backward(const Tensor<T>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

/// Throws NumericalError naming `op` if the buffer holds NaN or Inf.
template <typename T>
void check_finite(const std::vector<T>& data, const char* op);

/// Create an interior graph node. The graph edge and backprop closure are
/// kept only when some input requires grad; inference graphs stay flat.
template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> data,
                    std::vector<std::shared_ptr<Node<T>>> inputs,
                    std::function<void(Node<T>&)> backprop);

template <typename T>
bool any_requires_grad(const std::vector<std::shared_ptr<Node<T>>>& inputs);

}  // namespace detail

}  // namespace daft
