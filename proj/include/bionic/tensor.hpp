#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bionic {

using Shape = std::vector<int>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

// One tape node. Edges point child -> parents; `backprop` reads this node's
// grad and accumulates into the parents' grads.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

bool& grad_recording_flag();

}  // namespace detail

// RAII guard disabling tape recording (eval-mode forwards build no graph).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_recording_flag()) {
        detail::grad_recording_flag() = false;
    }
    ~NoGradGuard() { detail::grad_recording_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_recording_enabled() { return detail::grad_recording_flag(); }

template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::span<T> values() { return {node_->value.data(), node_->value.size()}; }
    std::span<const T> values() const { return {node_->value.data(), node_->value.size()}; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    // Empty until gradient has flowed into this tensor.
    std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
    std::span<T> grad_mutable() { return {node_->grad.data(), node_->grad.size()}; }
    void ensure_grad() { node_->ensure_grad(); }
    void zero_grad();

    T item() const;

    // Reverse-mode sweep from a scalar tensor.
    void backward();

    // Deep copy of values only (fresh leaf, no history).
    Tensor clone_detached(bool requires_grad = false) const;

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace bionic
