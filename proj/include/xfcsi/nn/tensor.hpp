// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xfcsi/common.hpp"

namespace xfcsi::nn {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Eigen's vectorised kernels pick their peeling and
// reduction order from the buffer address, so unaligned heap blocks would make
// float results depend on where malloc happened to put them.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor. Plain value type; the autodiff graph lives in Var.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    Buffer<T>& values() { return data_; }
    const Buffer<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) {
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        }
        Tensor out;
        out.shape_ = std::move(s);
        out.data_ = data_;
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <class Rng>
    static Tensor randn(Shape s, Rng& rng) {
        Tensor t(std::move(s));
        std::normal_distribution<double> nd(0.0, 1.0);
        for (auto& v : t.data_) v = static_cast<T>(nd(rng));
        return t;
    }

    template <class Rng>
    static Tensor uniform(Shape s, double lo, double hi, Rng& rng) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> ud(lo, hi);
        for (auto& v : t.data_) v = static_cast<T>(ud(rng));
        return t;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    Buffer<T> data_;
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;

    Tensor<T>& ensure_grad() {
        if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
    bool has_grad() const { return grad.numel() == value.numel() && !grad.empty(); }
};

// Handle to a node in the recorded computation graph.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Var constant(Tensor<T> v) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        return Var(std::move(n));
    }
    static Var leaf(Tensor<T> v) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(v);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    // Gradient after backward(); a zero tensor if nothing reached this node.
    Tensor<T> grad() const {
        if (node_->has_grad()) return node_->grad;
        return Tensor<T>(node_->value.shape());
    }
    void zero_grad() { node_->grad = Tensor<T>(); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Records an op result. Inputs are retained only when some input needs a
// gradient, so inference-only graphs are freed as they go.
template <class T, class Backward>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, Backward&& bw) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& in : inputs) n->inputs.push_back(in.ptr());
        n->backward = std::forward<Backward>(bw);
    }
    return Var<T>(std::move(n));
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate (sum over uses).
template <class T>
void backward(const Var<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->has_grad()) n->backward(*n);
    }
}

// Trainable tensor with a stable name used by checkpoints.
template <class T>
struct Parameter {
    std::string name;
    Var<T> var;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> init) : name(std::move(n)), var(Var<T>::leaf(std::move(init))) {}

    Tensor<T>& value() { return var.mutable_value(); }
    const Tensor<T>& value() const { return var.value(); }
    Tensor<T> grad() const { return var.grad(); }
    void zero_grad() { var.zero_grad(); }
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

template <class T>
void zero_grad(const ParamRefs<T>& params) {
    for (auto* p : params) p->zero_grad();
}

}  // namespace xfcsi::nn
