#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "medmamba/tensor.hpp"

namespace medmamba {

template <typename R>
class Tape;

template <typename R>
struct Var {
    Tape<R>* tape = nullptr;
    int32_t id = -1;

    const Tensor<R>& value() const { return tape->node(id).value; }
    const Tensor<R>& grad() const { return tape->node(id).grad; }
    const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape over dense tensors. Nodes append in evaluation order,
// so one reverse sweep is a valid topological traversal. One tape per
// sample per step; tensors on the tape are immutable once written.
template <typename R>
class Tape {
public:
    struct Node {
        Tensor<R> value;
        Tensor<R> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Var<R> leaf(Tensor<R> value, bool requires_grad = true) {
        return push(std::move(value), requires_grad);
    }

    Var<R> constant(Tensor<R> value) { return push(std::move(value), false); }

    Var<R> push(Tensor<R> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var<R>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    void set_backward(Var<R> v, std::function<void(Tape&)> fn) {
        nodes_[v.id].backward = std::move(fn);
    }

    Node& node(int32_t id) { return nodes_[id]; }
    const Node& node(int32_t id) const { return nodes_[id]; }
    size_t size() const { return nodes_.size(); }

    bool any_requires(std::initializer_list<int32_t> ids) const {
        for (int32_t id : ids)
            if (nodes_[id].requires_grad) return true;
        return false;
    }

    // Adds g into the grad accumulator of node id (allocated on first use).
    void accum(int32_t id, const Tensor<R>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        Tensor<R>& dstT = grad_buffer(id);
        R* dst = dstT.data();
        const R* src = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    }

    Tensor<R>& grad_buffer(int32_t id) {
        Node& n = nodes_[id];
        if (!n.grad.defined()) n.grad = Tensor<R>(n.value.shape());
        return n.grad;
    }

    bool has_grad(int32_t id) const { return nodes_[id].grad.defined(); }

    void backward(Var<R> loss) {
        if (loss.value().numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        Node& l = nodes_[loss.id];
        if (!l.grad.defined()) l.grad = Tensor<R>(l.value.shape());
        l.grad[0] = R(1);
        for (int32_t i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.defined()) n.backward(*this);
        }
    }

private:
    std::vector<Node> nodes_;
};

}  // namespace medmamba
