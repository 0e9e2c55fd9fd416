#include "bionic/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace bionic {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using Node = detail::Node<T>;

// Registers the backward edge when recording is on and any input carries grad.
template <typename T>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> parents,
            std::function<void()> fn) {
    if (!grad_recording_enabled()) return;
    bool any = false;
    for (const auto* p : parents) any = any || p->requires_grad();
    if (!any) return;
    auto& n = out.node();
    n->requires_grad = true;
    for (const auto* p : parents) n->parents.push_back(p->node());
    n->backprop = std::move(fn);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    }
}

#ifdef BIONIC_DEBUG_CHECKS
#define BIONIC_FINITE(t, name) check_finite(t, name)
#else
#define BIONIC_FINITE(t, name) ((void)0)
#endif

}  // namespace

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
    for (T v : t.values()) {
        if (!std::isfinite(v)) {
            throw Error(std::string(where) + ": non-finite value in tensor " +
                        shape_str(t.shape()));
        }
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    auto out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&a, &b}, [an, bn, on, n] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> axpy(const Tensor<T>& a, const Tensor<T>& b, T alpha) {
    require_same_shape(a, b, "axpy");
    auto out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + alpha * pb[i];

    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&a, &b}, [an, bn, on, n, alpha] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) bn->grad[i] += alpha * on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    auto out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];

    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&a, &b}, [an, bn, on, n] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, n] {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            if (xn->value[i] > T(0)) xn->grad[i] += on->grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-px[i]));

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, n] {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            const T y = on->value[i];
            xn->grad[i] += on->grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.ndim() < 1) throw Error("softmax: scalar input");
    const int c = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / c;
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * c;
        T* yr = po + r * c;
        T mx = xr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (int j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < c; ++j) yr[j] *= inv;
    }
    BIONIC_FINITE(out, "softmax");

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, rows, c] {
        xn->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = on->value.data() + r * c;
            const T* dy = on->grad.data() + r * c;
            T* dx = xn->grad.data() + r * c;
            T dot = T(0);
            for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
            for (int j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto out = Tensor<T>::from(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    const std::int64_t n = x.numel();
    attach(out, {&x}, [xn, on, n] {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Tensor<T>* mask) {
    if (x.ndim() != 2 || weight.ndim() != 2) {
        throw Error("linear: expected 2-d input and weight, got " + shape_str(x.shape()) +
                    " and " + shape_str(weight.shape()));
    }
    const int batch = x.dim(0), in = x.dim(1);
    const int out_f = weight.dim(0), win = weight.dim(1);
    if (in != win) {
        throw Error("linear: input features " + std::to_string(in) +
                    " do not match weight columns " + std::to_string(win));
    }
    if (bias.numel() != out_f) {
        throw Error("linear: bias length " + std::to_string(bias.numel()) + " vs out features " +
                    std::to_string(out_f));
    }
    const bool masked = mask != nullptr && mask->defined();
    if (masked) require_same_shape(weight, *mask, "linear mask");

    // Masked entries are multiplied out before the product so they contribute
    // exactly zero regardless of the stored weight value.
    std::vector<T> weff;
    const T* wp = weight.data();
    if (masked) {
        weff.resize(static_cast<std::size_t>(weight.numel()));
        const T* mp = mask->data();
        for (std::int64_t i = 0; i < weight.numel(); ++i) weff[i] = wp[i] * mp[i];
        wp = weff.data();
    }

    auto out = Tensor<T>::zeros({batch, out_f});
    {
        ConstMatMap<T> X(x.data(), batch, in);
        ConstMatMap<T> W(wp, out_f, in);
        MatMap<T> Y(out.data(), batch, out_f);
        Y.noalias() = X * W.transpose();
        const T* bp = bias.data();
        for (int b = 0; b < batch; ++b) {
            T* row = out.data() + static_cast<std::int64_t>(b) * out_f;
            for (int j = 0; j < out_f; ++j) row[j] += bp[j];
        }
    }
    BIONIC_FINITE(out, "linear");

    Node<T>* xn = x.node().get();
    Node<T>* wn = weight.node().get();
    Node<T>* bn = bias.node().get();
    Node<T>* on = out.node().get();
    std::shared_ptr<Node<T>> mask_node = masked ? mask->node() : nullptr;
    attach(out, {&x, &weight, &bias},
           [xn, wn, bn, on, mask_node, weff = std::move(weff), masked, batch, in, out_f] {
               ConstMatMap<T> dY(on->grad.data(), batch, out_f);
               if (xn->requires_grad) {
                   xn->ensure_grad();
                   ConstMatMap<T> W(masked ? weff.data() : wn->value.data(), out_f, in);
                   MatMap<T> dX(xn->grad.data(), batch, in);
                   dX.noalias() += dY * W;
               }
               if (wn->requires_grad) {
                   wn->ensure_grad();
                   ConstMatMap<T> X(xn->value.data(), batch, in);
                   MatMap<T> dW(wn->grad.data(), out_f, in);
                   if (masked) {
                       RowMat<T> g = dY.transpose() * X;
                       const T* mp = mask_node->value.data();
                       T* dwp = wn->grad.data();
                       const T* gp = g.data();
                       const std::int64_t n = static_cast<std::int64_t>(out_f) * in;
                       for (std::int64_t i = 0; i < n; ++i) dwp[i] += gp[i] * mp[i];
                   } else {
                       dW.noalias() += dY.transpose() * X;
                   }
               }
               if (bn->requires_grad) {
                   bn->ensure_grad();
                   for (int b = 0; b < batch; ++b) {
                       const T* row = on->grad.data() + static_cast<std::int64_t>(b) * out_f;
                       for (int j = 0; j < out_f; ++j) bn->grad[j] += row[j];
                   }
               }
           });
    return out;
}

namespace {

// Unfolds one batch item into (C*KH*KW) x (OH*OW), zero-filling padding.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
            T* col) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + ((static_cast<std::int64_t>(ci) * kh + ky) * kw + kx) *
                                   (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<std::int64_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow, T* x) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + ((static_cast<std::int64_t>(ci) * kh + ky) * kw + kx) *
                                         (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = x + (static_cast<std::int64_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int padding) {
    if (x.ndim() != 4 || kernel.ndim() != 4) {
        throw Error("conv2d: expected NCHW input and OIKK kernel, got " + shape_str(x.shape()) +
                    " and " + shape_str(kernel.shape()));
    }
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int o = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kc != c) {
        throw Error("conv2d: input channels " + std::to_string(c) + " vs kernel channels " +
                    std::to_string(kc));
    }
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (bias.numel() != o) {
        throw Error("conv2d: bias length " + std::to_string(bias.numel()) + " vs out channels " +
                    std::to_string(o));
    }
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw) {
        throw Error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                    std::to_string(w + 2 * padding));
    }

    const std::int64_t ckk = static_cast<std::int64_t>(c) * kh * kw;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    auto out = Tensor<T>::zeros({batch, o, oh, ow});
    {
        std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
        ConstMatMap<T> K(kernel.data(), o, ckk);
        const T* bp = bias.data();
        for (int b = 0; b < batch; ++b) {
            im2col(x.data() + static_cast<std::int64_t>(b) * c * h * w, c, h, w, kh, kw, stride,
                   padding, oh, ow, col.data());
            ConstMatMap<T> Col(col.data(), ckk, ohw);
            MatMap<T> Y(out.data() + static_cast<std::int64_t>(b) * o * ohw, o, ohw);
            Y.noalias() = K * Col;
            for (int oc = 0; oc < o; ++oc) {
                T* row = out.data() + (static_cast<std::int64_t>(b) * o + oc) * ohw;
                for (std::int64_t i = 0; i < ohw; ++i) row[i] += bp[oc];
            }
        }
    }
    BIONIC_FINITE(out, "conv2d");

    Node<T>* xn = x.node().get();
    Node<T>* kn = kernel.node().get();
    Node<T>* bn = bias.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x, &kernel, &bias},
           [xn, kn, bn, on, batch, c, h, w, o, kh, kw, stride, padding, oh, ow, ckk, ohw] {
               std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
               std::vector<T> dcol;
               if (xn->requires_grad) {
                   xn->ensure_grad();
                   dcol.resize(static_cast<std::size_t>(ckk * ohw));
               }
               if (kn->requires_grad) kn->ensure_grad();
               if (bn->requires_grad) bn->ensure_grad();
               ConstMatMap<T> K(kn->value.data(), o, ckk);
               for (int b = 0; b < batch; ++b) {
                   ConstMatMap<T> dY(on->grad.data() + static_cast<std::int64_t>(b) * o * ohw, o,
                                     ohw);
                   if (kn->requires_grad || xn->requires_grad) {
                       im2col(xn->value.data() + static_cast<std::int64_t>(b) * c * h * w, c, h, w,
                              kh, kw, stride, padding, oh, ow, col.data());
                   }
                   if (kn->requires_grad) {
                       ConstMatMap<T> Col(col.data(), ckk, ohw);
                       MatMap<T> dK(kn->grad.data(), o, ckk);
                       dK.noalias() += dY * Col.transpose();
                   }
                   if (xn->requires_grad) {
                       MatMap<T> dCol(dcol.data(), ckk, ohw);
                       dCol.noalias() = K.transpose() * dY;
                       col2im_add(dcol.data(), c, h, w, kh, kw, stride, padding, oh, ow,
                                  xn->grad.data() + static_cast<std::int64_t>(b) * c * h * w);
                   }
                   if (bn->requires_grad) {
                       for (int oc = 0; oc < o; ++oc) {
                           const T* row =
                               on->grad.data() + (static_cast<std::int64_t>(b) * o + oc) * ohw;
                           T s = T(0);
                           for (std::int64_t i = 0; i < ohw; ++i) s += row[i];
                           bn->grad[oc] += s;
                       }
                   }
               }
           });
    return out;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int window, int stride, int padding) {
    if (x.ndim() != 4) throw Error("avg_pool2d: expected NCHW, got " + shape_str(x.shape()));
    if (window < 1) throw Error("avg_pool2d: window must be >= 1");
    if (stride < 1) throw Error("avg_pool2d: stride must be >= 1");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (window > h + 2 * padding || window > w + 2 * padding) {
        throw Error("avg_pool2d: window " + std::to_string(window) + " larger than padded input " +
                    std::to_string(h + 2 * padding) + "x" + std::to_string(w + 2 * padding));
    }
    const int oh = (h + 2 * padding - window) / stride + 1;
    const int ow = (w + 2 * padding - window) / stride + 1;

    auto out = Tensor<T>::zeros({batch, c, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    for (int bc = 0; bc < batch * c; ++bc) {
        const T* plane = px + static_cast<std::int64_t>(bc) * h * w;
        T* oplane = po + static_cast<std::int64_t>(bc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int y0 = std::max(0, oy * stride - padding);
                const int y1 = std::min(h, oy * stride - padding + window);
                const int x0 = std::max(0, ox * stride - padding);
                const int x1 = std::min(w, ox * stride - padding + window);
                T sum = T(0);
                for (int iy = y0; iy < y1; ++iy) {
                    for (int ix = x0; ix < x1; ++ix) sum += plane[iy * w + ix];
                }
                const int cnt = (y1 - y0) * (x1 - x0);  // padding excluded
                oplane[oy * ow + ox] = cnt > 0 ? sum / static_cast<T>(cnt) : T(0);
            }
        }
    }

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, batch, c, h, w, oh, ow, window, stride, padding] {
        xn->ensure_grad();
        for (int bc = 0; bc < batch * c; ++bc) {
            T* gplane = xn->grad.data() + static_cast<std::int64_t>(bc) * h * w;
            const T* goplane = on->grad.data() + static_cast<std::int64_t>(bc) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const int y0 = std::max(0, oy * stride - padding);
                    const int y1 = std::min(h, oy * stride - padding + window);
                    const int x0 = std::max(0, ox * stride - padding);
                    const int x1 = std::min(w, ox * stride - padding + window);
                    const int cnt = (y1 - y0) * (x1 - x0);
                    if (cnt == 0) continue;
                    const T g = goplane[oy * ow + ox] / static_cast<T>(cnt);
                    for (int iy = y0; iy < y1; ++iy) {
                        for (int ix = x0; ix < x1; ++ix) gplane[iy * w + ix] += g;
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int window, int stride) {
    if (x.ndim() != 4) throw Error("max_pool2d: expected NCHW, got " + shape_str(x.shape()));
    if (window < 1) throw Error("max_pool2d: window must be >= 1");
    if (stride < 1) throw Error("max_pool2d: stride must be >= 1");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (window > h || window > w) {
        throw Error("max_pool2d: window " + std::to_string(window) + " larger than input " +
                    std::to_string(h) + "x" + std::to_string(w));
    }
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;

    auto out = Tensor<T>::zeros({batch, c, oh, ow});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
    const T* px = x.data();
    T* po = out.data();
    for (int bc = 0; bc < batch * c; ++bc) {
        const T* plane = px + static_cast<std::int64_t>(bc) * h * w;
        T* oplane = po + static_cast<std::int64_t>(bc) * oh * ow;
        std::int32_t* aplane = argmax.data() + static_cast<std::int64_t>(bc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::int32_t best_idx = 0;
                for (int ky = 0; ky < window; ++ky) {
                    const int iy = oy * stride + ky;
                    for (int kx = 0; kx < window; ++kx) {
                        const int ix = ox * stride + kx;
                        const T v = plane[iy * w + ix];
                        if (v > best) {  // ties keep the first occurrence
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                oplane[oy * ow + ox] = best;
                aplane[oy * ow + ox] = best_idx;
            }
        }
    }

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    const std::int64_t per_plane_out = static_cast<std::int64_t>(oh) * ow;
    attach(out, {&x}, [xn, on, argmax = std::move(argmax), batch, c, h, w, per_plane_out] {
        xn->ensure_grad();
        for (int bc = 0; bc < batch * c; ++bc) {
            T* gplane = xn->grad.data() + static_cast<std::int64_t>(bc) * h * w;
            const T* goplane = on->grad.data() + bc * per_plane_out;
            const std::int32_t* aplane = argmax.data() + bc * per_plane_out;
            for (std::int64_t i = 0; i < per_plane_out; ++i) gplane[aplane[i]] += goplane[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    if (x.ndim() < 1) throw Error("layer_norm: scalar input");
    const int n = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / n;
    if (gain.numel() != n || bias.numel() != n) {
        throw Error("layer_norm: gain/bias length must equal feature dim " + std::to_string(n));
    }

    auto out = Tensor<T>::zeros(x.shape());
    std::vector<T> mean(static_cast<std::size_t>(rows));
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    const T* px = x.data();
    const T* pg = gain.data();
    const T* pb = bias.data();
    T* po = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * n;
        T mu = T(0);
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (int j = 0; j < n; ++j) {
            const T d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        T* yr = po + r * n;
        for (int j = 0; j < n; ++j) yr[j] = pg[j] * ((xr[j] - mu) * inv) + pb[j];
    }
    BIONIC_FINITE(out, "layer_norm");

    Node<T>* xn = x.node().get();
    Node<T>* gn = gain.node().get();
    Node<T>* bn = bias.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x, &gain, &bias},
           [xn, gn, bn, on, mean = std::move(mean), inv_std = std::move(inv_std), rows, n] {
               if (xn->requires_grad) xn->ensure_grad();
               if (gn->requires_grad) gn->ensure_grad();
               if (bn->requires_grad) bn->ensure_grad();
               std::vector<T> xhat(static_cast<std::size_t>(n));
               for (std::int64_t r = 0; r < rows; ++r) {
                   const T* xr = xn->value.data() + r * n;
                   const T* dyr = on->grad.data() + r * n;
                   const T mu = mean[r];
                   const T inv = inv_std[r];
                   for (int j = 0; j < n; ++j) xhat[j] = (xr[j] - mu) * inv;
                   if (gn->requires_grad) {
                       for (int j = 0; j < n; ++j) gn->grad[j] += dyr[j] * xhat[j];
                   }
                   if (bn->requires_grad) {
                       for (int j = 0; j < n; ++j) bn->grad[j] += dyr[j];
                   }
                   if (xn->requires_grad) {
                       T sum1 = T(0), sum2 = T(0);
                       const T* g = gn->value.data();
                       for (int j = 0; j < n; ++j) {
                           const T dxh = dyr[j] * g[j];
                           sum1 += dxh;
                           sum2 += dxh * xhat[j];
                       }
                       const T invn = T(1) / static_cast<T>(n);
                       T* dxr = xn->grad.data() + r * n;
                       for (int j = 0; j < n; ++j) {
                           const T dxh = dyr[j] * g[j];
                           dxr[j] += inv * (dxh - sum1 * invn - xhat[j] * sum2 * invn);
                       }
                   }
               }
           });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4) throw Error("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
    const int batch = x.dim(0), c = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    auto out = Tensor<T>::zeros({batch, c});
    const T* px = x.data();
    T* po = out.data();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(batch) * c; ++bc) {
        T s = T(0);
        const T* plane = px + bc * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += plane[i];
        po[bc] = s / static_cast<T>(hw);
    }

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, batch, c, hw] {
        xn->ensure_grad();
        for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(batch) * c; ++bc) {
            const T g = on->grad[bc] / static_cast<T>(hw);
            T* gplane = xn->grad.data() + bc * hw;
            for (std::int64_t i = 0; i < hw; ++i) gplane[i] += g;
        }
    });
    return out;
}

template <typename T>
Tensor<T> channel_mean_max(const Tensor<T>& x) {
    if (x.ndim() != 4) throw Error("channel_mean_max: expected NCHW, got " + shape_str(x.shape()));
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    auto out = Tensor<T>::zeros({batch, 2, h, w});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(batch * hw));
    const T* px = x.data();
    T* po = out.data();
    for (int b = 0; b < batch; ++b) {
        const T* item = px + static_cast<std::int64_t>(b) * c * hw;
        T* mean_plane = po + static_cast<std::int64_t>(b) * 2 * hw;
        T* max_plane = mean_plane + hw;
        std::int32_t* am = argmax.data() + static_cast<std::int64_t>(b) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            T s = item[i];
            T best = item[i];
            std::int32_t best_c = 0;
            for (int ci = 1; ci < c; ++ci) {
                const T v = item[ci * hw + i];
                s += v;
                if (v > best) {
                    best = v;
                    best_c = ci;
                }
            }
            mean_plane[i] = s / static_cast<T>(c);
            max_plane[i] = best;
            am[i] = best_c;
        }
    }

    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x}, [xn, on, argmax = std::move(argmax), batch, c, hw] {
        xn->ensure_grad();
        const T invc = T(1) / static_cast<T>(c);
        for (int b = 0; b < batch; ++b) {
            T* gitem = xn->grad.data() + static_cast<std::int64_t>(b) * c * hw;
            const T* gmean = on->grad.data() + static_cast<std::int64_t>(b) * 2 * hw;
            const T* gmax = gmean + hw;
            const std::int32_t* am = argmax.data() + static_cast<std::int64_t>(b) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const T gm = gmean[i] * invc;
                for (int ci = 0; ci < c; ++ci) gitem[ci * hw + i] += gm;
                gitem[am[i] * hw + i] += gmax[i];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
    if (x.ndim() != 4 || s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
        throw Error("scale_channels: got " + shape_str(x.shape()) + " and " +
                    shape_str(s.shape()));
    }
    const int batch = x.dim(0), c = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* ps = s.data();
    T* po = out.data();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(batch) * c; ++bc) {
        const T sv = ps[bc];
        const T* plane = px + bc * hw;
        T* oplane = po + bc * hw;
        for (std::int64_t i = 0; i < hw; ++i) oplane[i] = plane[i] * sv;
    }

    Node<T>* xn = x.node().get();
    Node<T>* sn = s.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x, &s}, [xn, sn, on, batch, c, hw] {
        if (xn->requires_grad) xn->ensure_grad();
        if (sn->requires_grad) sn->ensure_grad();
        for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(batch) * c; ++bc) {
            const T* gout = on->grad.data() + bc * hw;
            if (xn->requires_grad) {
                const T sv = sn->value[bc];
                T* gx = xn->grad.data() + bc * hw;
                for (std::int64_t i = 0; i < hw; ++i) gx[i] += gout[i] * sv;
            }
            if (sn->requires_grad) {
                const T* xv = xn->value.data() + bc * hw;
                T acc = T(0);
                for (std::int64_t i = 0; i < hw; ++i) acc += gout[i] * xv[i];
                sn->grad[bc] += acc;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m) {
    if (x.ndim() != 4 || m.ndim() != 4 || m.dim(0) != x.dim(0) || m.dim(1) != 1 ||
        m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3)) {
        throw Error("scale_spatial: got " + shape_str(x.shape()) + " and " + shape_str(m.shape()));
    }
    const int batch = x.dim(0), c = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* pm = m.data();
    T* po = out.data();
    for (int b = 0; b < batch; ++b) {
        const T* mplane = pm + static_cast<std::int64_t>(b) * hw;
        for (int ci = 0; ci < c; ++ci) {
            const T* plane = px + (static_cast<std::int64_t>(b) * c + ci) * hw;
            T* oplane = po + (static_cast<std::int64_t>(b) * c + ci) * hw;
            for (std::int64_t i = 0; i < hw; ++i) oplane[i] = plane[i] * mplane[i];
        }
    }

    Node<T>* xn = x.node().get();
    Node<T>* mn = m.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x, &m}, [xn, mn, on, batch, c, hw] {
        if (xn->requires_grad) xn->ensure_grad();
        if (mn->requires_grad) mn->ensure_grad();
        for (int b = 0; b < batch; ++b) {
            const T* mplane = mn->value.data() + static_cast<std::int64_t>(b) * hw;
            T* gm = mn->requires_grad ? mn->grad.data() + static_cast<std::int64_t>(b) * hw
                                      : nullptr;
            for (int ci = 0; ci < c; ++ci) {
                const std::int64_t off = (static_cast<std::int64_t>(b) * c + ci) * hw;
                const T* gout = on->grad.data() + off;
                if (xn->requires_grad) {
                    T* gx = xn->grad.data() + off;
                    for (std::int64_t i = 0; i < hw; ++i) gx[i] += gout[i] * mplane[i];
                }
                if (gm) {
                    const T* xv = xn->value.data() + off;
                    for (std::int64_t i = 0; i < hw; ++i) gm[i] += gout[i] * xv[i];
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale_columns(const Tensor<T>& x, const Tensor<T>& s) {
    if (x.ndim() != 2 || s.numel() != x.dim(1)) {
        throw Error("scale_columns: got " + shape_str(x.shape()) + " and " +
                    shape_str(s.shape()));
    }
    const int batch = x.dim(0), n = x.dim(1);
    auto out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    const T* ps = s.data();
    T* po = out.data();
    for (int b = 0; b < batch; ++b) {
        const T* xr = px + static_cast<std::int64_t>(b) * n;
        T* yr = po + static_cast<std::int64_t>(b) * n;
        for (int j = 0; j < n; ++j) yr[j] = xr[j] * ps[j];
    }

    Node<T>* xn = x.node().get();
    Node<T>* sn = s.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&x, &s}, [xn, sn, on, batch, n] {
        if (xn->requires_grad) xn->ensure_grad();
        if (sn->requires_grad) sn->ensure_grad();
        for (int b = 0; b < batch; ++b) {
            const std::int64_t off = static_cast<std::int64_t>(b) * n;
            const T* gout = on->grad.data() + off;
            if (xn->requires_grad) {
                T* gx = xn->grad.data() + off;
                for (int j = 0; j < n; ++j) gx[j] += gout[j] * sn->value[j];
            }
            if (sn->requires_grad) {
                const T* xv = xn->value.data() + off;
                for (int j = 0; j < n; ++j) sn->grad[j] += gout[j] * xv[j];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> inhibition_scale(const Tensor<T>& alpha_raw, const std::vector<T>& coeff) {
    if (alpha_raw.numel() != 1) {
        throw Error("inhibition_scale: alpha must be a scalar tensor, got " +
                    shape_str(alpha_raw.shape()));
    }
    const int n = static_cast<int>(coeff.size());
    const T sig = T(1) / (T(1) + std::exp(-alpha_raw.data()[0]));
    auto out = Tensor<T>::zeros({n});
    T* po = out.data();
    for (int j = 0; j < n; ++j) po[j] = T(1) - sig * coeff[j];

    Node<T>* an = alpha_raw.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&alpha_raw}, [an, on, coeff, sig, n] {
        an->ensure_grad();
        const T dsig = sig * (T(1) - sig);
        T acc = T(0);
        for (int j = 0; j < n; ++j) acc += on->grad[j] * (-dsig * coeff[j]);
        an->grad[0] += acc;
    });
    return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        const std::vector<T>& class_weights, T smoothing) {
    if (logits.ndim() != 2) {
        throw Error("cross_entropy: expected BxC logits, got " + shape_str(logits.shape()));
    }
    const int batch = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch) {
        throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                    std::to_string(batch));
    }
    if (static_cast<int>(class_weights.size()) != c) {
        throw Error("cross_entropy: class_weights length " + std::to_string(class_weights.size()) +
                    " vs " + std::to_string(c) + " classes");
    }
    if (!(smoothing >= T(0) && smoothing < T(1))) {
        throw Error("cross_entropy: smoothing must be in [0, 1)");
    }
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= c) {
            throw Error("cross_entropy: label " + std::to_string(labels[b]) + " at row " +
                        std::to_string(b) + " outside [0, " + std::to_string(c) + ")");
        }
    }

    std::vector<T> probs(static_cast<std::size_t>(batch) * c);
    std::vector<T> sample_weight(static_cast<std::size_t>(batch));
    const T* pz = logits.data();
    T weight_sum = T(0);
    T loss_acc = T(0);
    const T uniform = smoothing / static_cast<T>(c);
    for (int b = 0; b < batch; ++b) {
        const T* zr = pz + static_cast<std::int64_t>(b) * c;
        T mx = zr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, zr[j]);
        T sum = T(0);
        for (int j = 0; j < c; ++j) sum += std::exp(zr[j] - mx);
        const T lse = mx + std::log(sum);
        T* pr = probs.data() + static_cast<std::int64_t>(b) * c;
        T row_loss = T(0);
        for (int j = 0; j < c; ++j) {
            const T logp = zr[j] - lse;
            pr[j] = std::exp(logp);
            const T target = uniform + (j == labels[b] ? (T(1) - smoothing) : T(0));
            row_loss -= target * logp;
        }
        const T wb = class_weights[static_cast<std::size_t>(labels[b])];
        sample_weight[b] = wb;
        weight_sum += wb;
        loss_acc += wb * row_loss;
    }
    if (weight_sum <= T(0)) throw Error("cross_entropy: non-positive total sample weight");

    auto out = Tensor<T>::from({1}, {loss_acc / weight_sum});
    BIONIC_FINITE(out, "cross_entropy");

    Node<T>* zn = logits.node().get();
    Node<T>* on = out.node().get();
    attach(out, {&logits},
           [zn, on, probs = std::move(probs), sample_weight = std::move(sample_weight), labels,
            weight_sum, uniform, smoothing, batch, c] {
               zn->ensure_grad();
               const T gout = on->grad[0];
               for (int b = 0; b < batch; ++b) {
                   const T scale = gout * sample_weight[b] / weight_sum;
                   const T* pr = probs.data() + static_cast<std::int64_t>(b) * c;
                   T* gz = zn->grad.data() + static_cast<std::int64_t>(b) * c;
                   for (int j = 0; j < c; ++j) {
                       const T target = uniform + (j == labels[b] ? (T(1) - smoothing) : T(0));
                       gz[j] += scale * (pr[j] - target);
                   }
               }
           });
    return out;
}

template <typename T>
Tensor<T> gaussian_noise(Shape shape, T sigma, RngStream& rng) {
    if (sigma < T(0)) throw Error("gaussian_noise: sigma must be >= 0");
    auto out = Tensor<T>::zeros(std::move(shape));
    if (sigma > T(0)) {
        for (auto& v : out.node()->value) v = static_cast<T>(rng.normal(0.0, sigma));
    }
    return out;
}

#define BIONIC_INSTANTIATE_OPS(T)                                                          \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> axpy(const Tensor<T>&, const Tensor<T>&, T);                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> relu(const Tensor<T>&);                                             \
    template Tensor<T> sigmoid(const Tensor<T>&);                                          \
    template Tensor<T> softmax(const Tensor<T>&);                                          \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                   \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                              const Tensor<T>*);                                           \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                              int);                                                        \
    template Tensor<T> avg_pool2d(const Tensor<T>&, int, int, int);                        \
    template Tensor<T> max_pool2d(const Tensor<T>&, int, int);                             \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                  T);                                                      \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                  \
    template Tensor<T> channel_mean_max(const Tensor<T>&);                                 \
    template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> scale_spatial(const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> scale_columns(const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> inhibition_scale(const Tensor<T>&, const std::vector<T>&);          \
    template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int>&,            \
                                     const std::vector<T>&, T);                            \
    template Tensor<T> gaussian_noise(Shape, T, RngStream&);                               \
    template void check_finite(const Tensor<T>&, const char*);

BIONIC_INSTANTIATE_OPS(float)
BIONIC_INSTANTIATE_OPS(double)
#undef BIONIC_INSTANTIATE_OPS

}  // namespace bionic
