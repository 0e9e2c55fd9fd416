#include "bionic/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace bionic {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw Error("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

namespace detail {

bool& grad_recording_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(shape_numel(n->shape)), T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node()->value) v = fill;
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
    const auto expect = shape_numel(shape);
    if (static_cast<std::int64_t>(data.size()) != expect) {
        throw Error("tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

template <typename T>
void Tensor<T>::zero_grad() {
    node_->grad.clear();
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw Error("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone_detached(bool requires_grad) const {
    return Tensor<T>::from(node_->shape, node_->value, requires_grad);
}

template <typename T>
void Tensor<T>::backward() {
    if (numel() != 1) throw Error("backward() requires a scalar, got " + shape_str(shape()));

    // Post-order DFS for a topological sweep; iterative to handle deep graphs.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.n->parents.size()) {
            Node* p = f.n->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop();
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace bionic
