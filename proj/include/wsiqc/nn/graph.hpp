#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "wsiqc/nn/tensor.hpp"

namespace wsiqc::nn {

// Define-by-run autograd. Ops append nodes to a Tape in creation order,
// which is already a valid topological order, so backward is a single
// reverse sweep. Parameter nodes live outside the tape (owned by the
// model) and keep their gradient across a step until zero_grad.
//
// Backward closures capture parent nodes by shared_ptr and their own node
// by raw pointer (the tape keeps it alive), avoiding a reference cycle.
struct Node {
    Tensor value;
    Tensor grad;            // allocated lazily
    bool needs_grad = false;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.v.empty()) grad = Tensor::zeros_like(value);
    }
    void zero_grad() {
        if (!grad.v.empty()) std::fill(grad.v.begin(), grad.v.end(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

struct Var {
    NodePtr node;

    Var() = default;
    explicit Var(NodePtr n) : node(std::move(n)) {}

    const Tensor& value() const { return node->value; }
    Tensor& value() { return node->value; }
    bool needs_grad() const { return node && node->needs_grad; }
};

inline Var make_leaf(Tensor value, bool needs_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    return Var(std::move(n));
}

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    // Creates the output node; the caller attaches the backward closure
    // afterwards (it needs the node pointer for its own gradient).
    Var emit(Tensor value, bool needs_grad) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->needs_grad = grad_enabled_ && needs_grad;
        nodes_.push_back(n);
        return Var(n);
    }

    void backward(const Var& loss) {
        if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
        if (loss.value().size() != 1)
            throw std::logic_error("backward expects a scalar loss, got " +
                                   loss.value().shape_str());
        loss.node->ensure_grad();
        loss.node->grad.v[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& nd = **it;
            if (nd.needs_grad && nd.backward_fn && !nd.grad.v.empty()) nd.backward_fn();
        }
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    bool grad_enabled_;
    std::vector<NodePtr> nodes_;
};

inline void accumulate_grad(const NodePtr& dst, const Tensor& src) {
    dst->ensure_grad();
    const std::size_t n = src.v.size();
    for (std::size_t i = 0; i < n; ++i) dst->grad.v[i] += src.v[i];
}

}  // namespace wsiqc::nn
