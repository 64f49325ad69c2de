#include "trido/autograd.hpp"

#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace trido {

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
    if (!has_grad()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad, std::string name) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->op = std::move(name);
    return Var(std::move(node));
}

template <typename T>
void Var<T>::zero_grad() {
    if (node_->has_grad())
        node_->grad.fill(T(0));
    else
        node_->grad = Tensor<T>(node_->value.shape(), T(0));
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() noexcept { return g_no_grad; }

template <typename T>
Var<T> make_result(std::string op, Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backward) {
#ifndef NDEBUG
    if (!value.all_finite()) throw std::runtime_error("non-finite output from op " + op);
#endif
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = std::move(op);
    bool any = false;
    if (!g_no_grad)
        for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

template <typename T>
Tape<T> Tape<T>::record(const Var<T>& root) {
    Tape tape;
    if (!root || !root.requires_grad()) return tape;
    // Iterative post-order DFS; the post-order is a valid topological order.
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void Tape<T>::run_backward() const {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->has_grad()) node->backward(*node);
    }
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss) throw std::invalid_argument("backward on empty variable");
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    auto tape = Tape<T>::record(loss);
    loss.node()->grad_buffer()[0] += T(1);
    tape.run_backward();
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template Var<float> make_result(std::string, Tensor<float>, std::vector<NodePtr<float>>,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(std::string, Tensor<double>, std::vector<NodePtr<double>>,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace trido
