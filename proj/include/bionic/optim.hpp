#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bionic/tensor.hpp"

namespace bionic {

// A learnable tensor plus its optional binary connectivity mask. Invariant:
// masked entries of `value` are exactly zero at all times.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;  // requires_grad
    Tensor<T> mask;   // optional; same shape; not learnable
    bool decay_exempt = false;

    bool has_mask() const { return mask.defined(); }
    void apply_mask_to_value();
    void apply_mask_to_grad();

    // Trainable scalar count; with include_masked=false, masked-out entries
    // are excluded.
    std::int64_t count(bool include_masked) const;
};

template <typename T>
struct AdamConfig {
    T lr = T(6e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

// Classic Adam with bias correction. The L2 term weight_decay*value is added
// to the gradient before the moment updates (skipped for decay-exempt
// parameters); masks are re-applied to values after every step.
template <typename T>
class Adam {
public:
    Adam(std::vector<Parameter<T>*> params, AdamConfig<T> cfg);

    void step();
    void zero_grad();

    T lr() const { return cfg_.lr; }
    void set_lr(T lr) { cfg_.lr = lr; }
    std::int64_t step_count() const { return t_; }
    const AdamConfig<T>& config() const { return cfg_; }

    const std::vector<T>& moment1(std::size_t i) const { return m_[i]; }
    const std::vector<T>& moment2(std::size_t i) const { return v_[i]; }
    void restore_state(std::int64_t step, std::vector<std::vector<T>> m,
                       std::vector<std::vector<T>> v);

private:
    std::vector<Parameter<T>*> params_;
    AdamConfig<T> cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace bionic
