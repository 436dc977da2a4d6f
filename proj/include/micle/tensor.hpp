#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "micle/common.hpp"

namespace micle {

struct DomainError : NumericError {
    using NumericError::NumericError;
};

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// handle onto shared node storage; ops build a tape of parent links plus a
// backward closure. Graphs are single-owner: build and differentiate from
// one thread (ops may parallelize internally).
template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // allocated on first use; leaf grads persist across backward()
        bool requires_grad = false;
        std::vector<Tensor> parents;
        // Reads this node's value/grad, accumulates into parents' grads.
        std::function<void(const Node&)> backward_fn;
    };

    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return from_data(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
    }

    static Tensor full(const Shape& shape, T v, bool requires_grad = false) {
        return from_data(shape, std::vector<T>(numel(shape), v), requires_grad);
    }

    static Tensor scalar(T v) { return from_data(Shape{}, {v}, false); }

    static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
        check_dim(numel(shape) == data.size(),
                  "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                      shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->value.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t rank() const { return n_->shape.size(); }

    const std::vector<T>& value() const { return n_->value; }
    std::vector<T>& value() { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }

    // Accumulated gradient; empty until a backward() pass reaches this node.
    const std::vector<T>& grad() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        check_dim(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool is_leaf() const { return !n_->backward_fn; }

    // Detached copy of the current value (no graph linkage, no grad).
    Tensor detach() const { return from_data(n_->shape, n_->value, false); }

    // Reverse-mode sweep from a scalar. Leaf gradients accumulate additively
    // across calls; interior gradients are reset per call.
    void backward() {
        if (size() != 1) {
            throw ValidationError("backward() requires a scalar loss, got shape " +
                                  shape_str(shape()));
        }
        std::vector<Node*> order;
        topo_collect(order);
        for (Node* node : order) {
            if (node->backward_fn) node->grad.assign(node->value.size(), T(0));
        }
        ensure_grad(*n_);
        n_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
        }
    }

    Node* node() const { return n_.get(); }

    static void ensure_grad(Node& n) {
        if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    }

    // Installs an op result node. Graph linkage is dropped when no input
    // participates in differentiation, so inference builds no tape.
    static Tensor make_op(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                          std::function<void(const Node&)> backward_fn) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        bool needs = false;
        for (const auto& p : parents) {
            needs = needs || p.n_->requires_grad || p.n_->backward_fn;
        }
        n->requires_grad = needs;
        if (needs) {
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
        return Tensor(std::move(n));
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    void topo_collect(std::vector<Node*>& order) const {
        // Iterative post-order DFS over parent links; visits each node once.
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* next = node->parents[idx].n_.get();
                ++idx;
                if (seen.insert(next).second) stack.emplace_back(next, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> n_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace micle
