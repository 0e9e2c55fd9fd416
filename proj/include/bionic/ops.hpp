#pragma once

#include <vector>

#include "bionic/rng.hpp"
#include "bionic/tensor.hpp"

namespace bionic {

// Elementwise / shape
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> axpy(const Tensor<T>& a, const Tensor<T>& b, T alpha);  // a + alpha*b
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);  // over the last axis, max-subtracted
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Dense / convolutional maps. `mask`, when non-null, is applied as an
// elementwise product on the weight before the product; masked entries
// contribute exactly zero to the output and receive exactly zero gradient.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Tensor<T>* mask = nullptr);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding);

// Pooling. avg_pool2d excludes padding from the divisor; max_pool2d routes
// the gradient to the first occurrence of the maximum.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int window, int stride, int padding);
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int window, int stride);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

// B,C,H,W reductions / broadcasts used by the attention blocks.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);  // -> B,C
template <typename T>
Tensor<T> channel_mean_max(const Tensor<T>& x);  // -> B,2,H,W (mean, max over C)
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);  // s: B,C
template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m);  // m: B,1,H,W

// Per-feature scaling of a B,N tensor by a length-N vector.
template <typename T>
Tensor<T> scale_columns(const Tensor<T>& x, const Tensor<T>& s);

// s[j] = 1 - sigmoid(alpha_raw) * coeff[j]; alpha_raw is a learnable scalar,
// coeff a fixed per-unit coefficient in [0, 1].
template <typename T>
Tensor<T> inhibition_scale(const Tensor<T>& alpha_raw, const std::vector<T>& coeff);

// Class-weighted label-smoothed cross entropy over logits (B x C), reduced as
// the weighted mean: sum_b w[y_b] * l_b / sum_b w[y_b].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        const std::vector<T>& class_weights, T smoothing);

// Constant (no-grad) tensor of i.i.d. N(0, sigma^2) draws.
template <typename T>
Tensor<T> gaussian_noise(Shape shape, T sigma, RngStream& rng);

// Throws if the tensor contains NaN/Inf. Forward ops call this in debug
// builds (BIONIC_DEBUG_CHECKS).
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

#define BIONIC_DECLARE_OPS(T)                                                              \
    extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                     \
    extern template Tensor<T> axpy(const Tensor<T>&, const Tensor<T>&, T);                 \
    extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                     \
    extern template Tensor<T> relu(const Tensor<T>&);                                      \
    extern template Tensor<T> sigmoid(const Tensor<T>&);                                   \
    extern template Tensor<T> softmax(const Tensor<T>&);                                   \
    extern template Tensor<T> reshape(const Tensor<T>&, Shape);                            \
    extern template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     const Tensor<T>*);                                    \
    extern template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     int, int);                                            \
    extern template Tensor<T> avg_pool2d(const Tensor<T>&, int, int, int);                 \
    extern template Tensor<T> max_pool2d(const Tensor<T>&, int, int);                      \
    extern template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,               \
                                         const Tensor<T>&, T);                             \
    extern template Tensor<T> global_avg_pool(const Tensor<T>&);                           \
    extern template Tensor<T> channel_mean_max(const Tensor<T>&);                          \
    extern template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);          \
    extern template Tensor<T> scale_spatial(const Tensor<T>&, const Tensor<T>&);           \
    extern template Tensor<T> scale_columns(const Tensor<T>&, const Tensor<T>&);           \
    extern template Tensor<T> inhibition_scale(const Tensor<T>&, const std::vector<T>&);   \
    extern template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&,     \
                                            const std::vector<T>&, T);                     \
    extern template Tensor<T> gaussian_noise(Shape, T, RngStream&);                        \
    extern template void check_finite(const Tensor<T>&, const char*);

BIONIC_DECLARE_OPS(float)
BIONIC_DECLARE_OPS(double)
#undef BIONIC_DECLARE_OPS

}  // namespace bionic
