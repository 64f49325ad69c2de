#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "trido/tensor.hpp"

namespace trido {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One recorded operation (or leaf). `backward` reads `grad` and accumulates
/// into the parents' grads.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::string op;
    std::vector<NodePtr<T>> parents;
    std::function<void(Node&)> backward;

    /// Zero-initialised gradient buffer, allocated on first use.
    Tensor<T>& grad_buffer();
    bool has_grad() const noexcept { return grad.size() == value.size() && value.size() > 0; }
};

/// Handle to a node in the computation graph.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

    static Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = "leaf");
    static Var constant(Tensor<T> value) { return leaf(std::move(value), false, "const"); }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad();

    explicit operator bool() const noexcept { return static_cast<bool>(node_); }
    const NodePtr<T>& node() const noexcept { return node_; }

private:
    NodePtr<T> node_;
};

/// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active() noexcept;

private:
    bool previous_;
};

/// Creates the output node of an op. When no parent requires a gradient the
/// parents and backward rule are dropped so inference keeps no graph alive.
template <typename T>
Var<T> make_result(std::string op, Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backward);

/// Topologically ordered list of the nodes a scalar depends on.
template <typename T>
class Tape {
public:
    static Tape record(const Var<T>& root);

    const std::vector<Node<T>*>& nodes() const noexcept { return order_; }
    std::size_t size() const noexcept { return order_.size(); }

    /// Reverse sweep. Every node is visited exactly once.
    void run_backward() const;

private:
    std::vector<Node<T>*> order_;
};

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node that requires one. Throws ShapeError if `loss` is not a scalar.
template <typename T>
void backward(const Var<T>& loss);

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace trido
