#include "bionic/optim.hpp"

#include <cmath>

namespace bionic {

template <typename T>
void Parameter<T>::apply_mask_to_value() {
    if (!has_mask()) return;
    T* v = value.data();
    const T* m = mask.data();
    const std::int64_t n = value.numel();
    for (std::int64_t i = 0; i < n; ++i) v[i] *= m[i];
}

template <typename T>
void Parameter<T>::apply_mask_to_grad() {
    if (!has_mask()) return;
    auto g = value.grad_mutable();
    if (g.empty()) return;
    const T* m = mask.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= m[i];
}

template <typename T>
std::int64_t Parameter<T>::count(bool include_masked) const {
    if (include_masked || !has_mask()) return value.numel();
    std::int64_t n = 0;
    for (T m : mask.values()) {
        if (m != T(0)) ++n;
    }
    return n;
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig<T> cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto n = static_cast<std::size_t>(params_[i]->value.numel());
        m_[i].assign(n, T(0));
        v_[i].assign(n, T(0));
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto* p : params_) p->value.zero_grad();
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter<T>& p = *params_[i];
        T* val = p.value.data();
        const auto gspan = p.value.grad();
        const std::int64_t n = p.value.numel();
        const T wd = p.decay_exempt ? T(0) : cfg_.weight_decay;
        std::vector<T>& m = m_[i];
        std::vector<T>& v = v_[i];
        for (std::int64_t j = 0; j < n; ++j) {
            const T g = (gspan.empty() ? T(0) : gspan[j]) + wd * val[j];
            m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g * g;
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.apply_mask_to_value();
    }
}

template <typename T>
void Adam<T>::restore_state(std::int64_t step, std::vector<std::vector<T>> m,
                            std::vector<std::vector<T>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw Error("adam: state size does not match parameter count");
    }
    t_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

template struct Parameter<float>;
template struct Parameter<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace bionic
