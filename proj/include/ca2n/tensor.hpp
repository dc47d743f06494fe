// Copyright (c) 2026 CA2N Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with define-by-run reverse-mode differentiation. The graph is
// rebuilt on every forward pass; a Tape is the linearized schedule of one
// backward traversal. Works at 32-bit precision for training and 64-bit for
// gradient checking (pick the scalar type at instantiation).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "ca2n/common.hpp"

namespace ca2n {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, only on nodes that require grad
    bool requires_grad = false;
    bool trainable = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T v) {
        check_shape(shape);
        auto n = std::make_shared<TensorNode<T>>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return filled({1}, v); }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        check_shape(shape);
        if (shape_numel(shape) != data.size())
            throw InvalidInput(concat_msg("tensor: ", data.size(), " elements do not fill shape ",
                                          shape_str(shape)));
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }

    const std::vector<T>& value() const { return n_->value; }
    std::vector<T>& raw_value() { return n_->value; }
    const std::vector<T>& grad() const { return n_->grad; }
    std::vector<T>& raw_grad() { return n_->grad; }

    T item() const {
        if (numel() != 1)
            throw InvalidInput(concat_msg("item: tensor ", shape_str(shape()), " is not scalar"));
        return n_->value[0];
    }

    T at(std::initializer_list<int> idx) const {
        std::size_t flat = 0;
        std::size_t i = 0;
        for (int v : idx) flat = flat * static_cast<std::size_t>(n_->shape[i++]) + v;
        return n_->value[flat];
    }

    Tensor& set_trainable(bool on = true) {
        n_->trainable = on;
        n_->requires_grad = on;
        return *this;
    }
    bool trainable() const { return n_->trainable; }
    bool requires_grad() const { return n_->requires_grad; }

    // New leaf carrying a copy of the value; cuts the graph.
    Tensor detach() const {
        auto m = std::make_shared<TensorNode<T>>();
        m->shape = n_->shape;
        m->value = n_->value;
        return Tensor(std::move(m));
    }

    bool all_finite() const {
        for (T v : n_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    TensorNode<T>* node() const { return n_.get(); }
    const std::shared_ptr<TensorNode<T>>& handle() const { return n_; }

    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

private:
    static void check_shape(const Shape& s) {
        if (s.empty()) throw InvalidInput("tensor: empty shape");
        for (int d : s)
            if (d <= 0)
                throw InvalidInput(concat_msg("tensor: non-positive dimension in ", shape_str(s)));
    }

    std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> back) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), T(0));
    bool needs = false;
    n->parents.reserve(parents.size());
    for (auto& p : parents) {
        needs = needs || p.node()->requires_grad;
        n->parents.push_back(p.handle());
    }
    n->requires_grad = needs;
    if (needs) n->backprop = std::move(back);
    return Tensor<T>(std::move(n));
}

template <typename T>
void require_equal_shapes(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw InvalidInput(concat_msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                                      shape_str(b.shape())));
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// --- direct convolution kernels ------------------------------------------
// All three routines run over one sample. Kernels are stored [K][C][kh][kw].
// gather:  out[k,oh,ow] += sum_{c,r,q} in[c, oh*s-p+r, ow*s-p+q] * ker[k,c,r,q]
// scatter: out[c, oh*s-p+r, ow*s-p+q] += sum_k src[k,oh,ow] * ker[k,c,r,q]
// kgrad:   dker[k,c,r,q] += sum_{oh,ow} dout[k,oh,ow] * in[c, oh*s-p+r, ...]
struct ConvGeom {
    int C, H, W;      // gather-side input
    int K, OH, OW;    // gather-side output
    int kh, kw, stride, pad;
};

template <typename T>
void conv_gather(T* out, const T* in, const T* ker, const ConvGeom& g) {
    for (int k = 0; k < g.K; ++k) {
        T* o = out + static_cast<std::size_t>(k) * g.OH * g.OW;
        for (int c = 0; c < g.C; ++c) {
            const T* x = in + static_cast<std::size_t>(c) * g.H * g.W;
            const T* wrow = ker + (static_cast<std::size_t>(k) * g.C + c) * g.kh * g.kw;
            for (int r = 0; r < g.kh; ++r) {
                for (int q = 0; q < g.kw; ++q) {
                    T wv = wrow[r * g.kw + q];
                    for (int oh = 0; oh < g.OH; ++oh) {
                        int ih = oh * g.stride - g.pad + r;
                        if (ih < 0 || ih >= g.H) continue;
                        const T* xr = x + static_cast<std::size_t>(ih) * g.W;
                        T* orow = o + static_cast<std::size_t>(oh) * g.OW;
                        int ow0 = 0, ow1 = g.OW;
                        while (ow0 < g.OW && ow0 * g.stride - g.pad + q < 0) ++ow0;
                        while (ow1 > ow0 && (ow1 - 1) * g.stride - g.pad + q >= g.W) --ow1;
                        if (g.stride == 1) {
                            const T* xq = xr + ow0 - g.pad + q;
                            for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xq[ow - ow0];
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow)
                                orow[ow] += wv * xr[ow * g.stride - g.pad + q];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_scatter(T* out, const T* src, const T* ker, const ConvGeom& g) {
    for (int k = 0; k < g.K; ++k) {
        const T* s = src + static_cast<std::size_t>(k) * g.OH * g.OW;
        for (int c = 0; c < g.C; ++c) {
            T* x = out + static_cast<std::size_t>(c) * g.H * g.W;
            const T* wrow = ker + (static_cast<std::size_t>(k) * g.C + c) * g.kh * g.kw;
            for (int r = 0; r < g.kh; ++r) {
                for (int q = 0; q < g.kw; ++q) {
                    T wv = wrow[r * g.kw + q];
                    for (int oh = 0; oh < g.OH; ++oh) {
                        int ih = oh * g.stride - g.pad + r;
                        if (ih < 0 || ih >= g.H) continue;
                        T* xr = x + static_cast<std::size_t>(ih) * g.W;
                        const T* srow = s + static_cast<std::size_t>(oh) * g.OW;
                        int ow0 = 0, ow1 = g.OW;
                        while (ow0 < g.OW && ow0 * g.stride - g.pad + q < 0) ++ow0;
                        while (ow1 > ow0 && (ow1 - 1) * g.stride - g.pad + q >= g.W) --ow1;
                        if (g.stride == 1) {
                            T* xq = xr + ow0 - g.pad + q;
                            for (int ow = ow0; ow < ow1; ++ow) xq[ow - ow0] += wv * srow[ow];
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow)
                                xr[ow * g.stride - g.pad + q] += wv * srow[ow];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_kgrad(T* dker, const T* dout, const T* in, const ConvGeom& g) {
    for (int k = 0; k < g.K; ++k) {
        const T* o = dout + static_cast<std::size_t>(k) * g.OH * g.OW;
        for (int c = 0; c < g.C; ++c) {
            const T* x = in + static_cast<std::size_t>(c) * g.H * g.W;
            T* wrow = dker + (static_cast<std::size_t>(k) * g.C + c) * g.kh * g.kw;
            for (int r = 0; r < g.kh; ++r) {
                for (int q = 0; q < g.kw; ++q) {
                    T acc = 0;
                    for (int oh = 0; oh < g.OH; ++oh) {
                        int ih = oh * g.stride - g.pad + r;
                        if (ih < 0 || ih >= g.H) continue;
                        const T* xr = x + static_cast<std::size_t>(ih) * g.W;
                        const T* orow = o + static_cast<std::size_t>(oh) * g.OW;
                        int ow0 = 0, ow1 = g.OW;
                        while (ow0 < g.OW && ow0 * g.stride - g.pad + q < 0) ++ow0;
                        while (ow1 > ow0 && (ow1 - 1) * g.stride - g.pad + q >= g.W) --ow1;
                        if (g.stride == 1) {
                            const T* xq = xr + ow0 - g.pad + q;
                            for (int ow = ow0; ow < ow1; ++ow) acc += orow[ow] * xq[ow - ow0];
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow)
                                acc += orow[ow] * xr[ow * g.stride - g.pad + q];
                        }
                    }
                    wrow[r * g.kw + q] += acc;
                }
            }
        }
    }
}

}  // namespace detail

// --- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_equal_shapes(a, b, "add");
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& n) {
        for (int i = 0; i < 2; ++i) {
            auto& p = n.parents[i];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            detail::add_into(p->grad, n.grad);
        }
    });
    auto& o = out.raw_value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] + b.value()[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_equal_shapes(a, b, "sub");
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            detail::add_into(n.parents[0]->grad, n.grad);
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad;
            n.parents[1]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
    auto& o = out.raw_value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] - b.value()[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_equal_shapes(a, b, "mul");
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
    auto& o = out.raw_value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] * b.value()[i];
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_equal_shapes(a, b, "div");
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](TensorNode<T>& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pb->grad[i] -= n.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
        }
    });
    auto& o = out.raw_value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.value()[i] / b.value()[i];
    return out;
}

namespace detail {
// fwd computes y from x, bwd computes dy/dx from (x, y)
template <typename T, typename F, typename D>
Tensor<T> make_unary(const Tensor<T>& a, F fwd, D bwd) {
    auto out = detail::make_op<T>(a.shape(), {a}, [bwd](TensorNode<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p->grad[i] += n.grad[i] * bwd(p->value[i], n.value[i]);
    });
    auto& o = out.raw_value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(a.value()[i]);
    return out;
}
}  // namespace detail

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::make_unary(
        a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return detail::make_unary(
        a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    // subgradient 0 at exactly zero
    return detail::make_unary(
        a, [](T x) { return x < 0 ? -x : x; },
        [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    // gradient 1 on the closed interval, 0 outside
    return detail::make_unary(
        a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::make_unary(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    // subgradient 0 at exactly zero, like abs
    return detail::make_unary(
        a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return y > 0 ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::make_unary(
        a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return detail::make_unary(
        a, [slope](T x) { return x > 0 ? x : slope * x; },
        [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::make_unary(
        a,
        [](T x) {
            return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                          : std::exp(x) / (T(1) + std::exp(x));
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail::make_unary(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// --- shape ops -------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw InvalidInput(concat_msg("reshape: ", shape_str(a.shape()), " to ", shape_str(shape),
                                      " changes element count"));
    auto out = detail::make_op<T>(std::move(shape), {a}, [](TensorNode<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        detail::add_into(p->grad, n.grad);
    });
    out.raw_value() = a.value();
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw InvalidInput("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        throw InvalidInput(concat_msg("concat: axis ", axis, " out of range for rank ", s0.size()));
    Shape out_shape = s0;
    int total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw InvalidInput("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != s0[i])
                throw InvalidInput(concat_msg("concat: shape mismatch ", shape_str(s), " vs ",
                                              shape_str(s0), " off axis ", axis));
        total += s[axis];
    }
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    auto out = detail::make_op<T>(out_shape, parts, [axis, outer, inner, total](TensorNode<T>& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            std::size_t span = static_cast<std::size_t>(p->shape[axis]) * inner;
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = n.grad.data() + (o * total) * inner + off;
                    T* dst = p->grad.data() + o * span;
                    for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
                }
            }
            off += span;
        }
    });
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t span = static_cast<std::size_t>(p.shape()[axis]) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = p.value().data() + o * span;
            T* dst = out.raw_value().data() + (o * total) * inner + off;
            std::copy(src, src + span, dst);
        }
        off += span;
    }
    return out;
}

// Rectangular region on the two trailing (spatial) axes.
struct SpatialBox {
    int x = 0, y = 0, w = 0, h = 0;
};

namespace detail {
template <typename T>
void check_box(const Tensor<T>& t, const SpatialBox& b, const char* op) {
    std::size_t r = t.rank();
    if (r != 3 && r != 4)
        throw InvalidInput(concat_msg(op, ": expected rank 3 or 4, got ", shape_str(t.shape())));
    int H = t.shape()[r - 2], W = t.shape()[r - 1];
    if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > W || b.y + b.h > H)
        throw InvalidInput(concat_msg(op, ": region (x=", b.x, ",y=", b.y, ",w=", b.w, ",h=", b.h,
                                      ") outside ", H, "x", W, " bounds"));
}
}  // namespace detail

template <typename T>
Tensor<T> crop(const Tensor<T>& a, const SpatialBox& box) {
    detail::check_box(a, box, "crop");
    std::size_t r = a.rank();
    const int H = a.shape()[r - 2], W = a.shape()[r - 1];
    std::size_t planes = a.numel() / (static_cast<std::size_t>(H) * W);
    Shape out_shape = a.shape();
    out_shape[r - 2] = box.h;
    out_shape[r - 1] = box.w;

    auto out = detail::make_op<T>(out_shape, {a}, [box, planes, H, W](TensorNode<T>& n) {
        auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            T* dst = p->grad.data() + pl * H * W;
            const T* src = n.grad.data() + pl * box.h * box.w;
            for (int row = 0; row < box.h; ++row) {
                T* d = dst + static_cast<std::size_t>(box.y + row) * W + box.x;
                const T* s = src + static_cast<std::size_t>(row) * box.w;
                for (int col = 0; col < box.w; ++col) d[col] += s[col];
            }
        }
    });
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = a.value().data() + pl * H * W;
        T* dst = out.raw_value().data() + pl * box.h * box.w;
        for (int row = 0; row < box.h; ++row)
            std::copy(src + static_cast<std::size_t>(box.y + row) * W + box.x,
                      src + static_cast<std::size_t>(box.y + row) * W + box.x + box.w,
                      dst + static_cast<std::size_t>(row) * box.w);
    }
    return out;
}

template <typename T>
Tensor<T> paste(const Tensor<T>& target, const Tensor<T>& patch, const SpatialBox& box) {
    detail::check_box(target, box, "paste");
    std::size_t r = target.rank();
    if (patch.rank() != r)
        throw InvalidInput(concat_msg("paste: rank mismatch ", shape_str(patch.shape()), " into ",
                                      shape_str(target.shape())));
    Shape expect = target.shape();
    expect[r - 2] = box.h;
    expect[r - 1] = box.w;
    if (patch.shape() != expect)
        throw InvalidInput(concat_msg("paste: patch ", shape_str(patch.shape()),
                                      " does not match region shape ", shape_str(expect)));

    const int H = target.shape()[r - 2], W = target.shape()[r - 1];
    std::size_t planes = target.numel() / (static_cast<std::size_t>(H) * W);

    auto out = detail::make_op<T>(target.shape(), {target, patch},
                                  [box, planes, H, W](TensorNode<T>& n) {
        auto& tgt = n.parents[0];
        auto& pat = n.parents[1];
        if (tgt->requires_grad) {
            tgt->ensure_grad();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const T* src = n.grad.data() + pl * H * W;
                T* dst = tgt->grad.data() + pl * H * W;
                for (int row = 0; row < H; ++row) {
                    bool inside_rows = row >= box.y && row < box.y + box.h;
                    for (int col = 0; col < W; ++col) {
                        bool inside = inside_rows && col >= box.x && col < box.x + box.w;
                        if (!inside) dst[row * W + col] += src[row * W + col];
                    }
                }
            }
        }
        if (pat->requires_grad) {
            pat->ensure_grad();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const T* src = n.grad.data() + pl * H * W;
                T* dst = pat->grad.data() + pl * box.h * box.w;
                for (int row = 0; row < box.h; ++row)
                    for (int col = 0; col < box.w; ++col)
                        dst[row * box.w + col] +=
                            src[static_cast<std::size_t>(box.y + row) * W + box.x + col];
            }
        }
    });
    out.raw_value() = target.value();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = patch.value().data() + pl * box.h * box.w;
        T* dst = out.raw_value().data() + pl * H * W;
        for (int row = 0; row < box.h; ++row)
            std::copy(src + static_cast<std::size_t>(row) * box.w,
                      src + static_cast<std::size_t>(row) * box.w + box.w,
                      dst + static_cast<std::size_t>(box.y + row) * W + box.x);
    }
    return out;
}

// --- linear / convolution ---------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2)
        throw InvalidInput(concat_msg("linear: expected [N,din] x [dout,din], got ",
                                      shape_str(x.shape()), " and ", shape_str(weight.shape())));
    const int N = x.dim(0), din = x.dim(1);
    const int dout = weight.dim(0);
    if (weight.dim(1) != din)
        throw InvalidInput(concat_msg("linear: inner dimensions disagree: input ",
                                      shape_str(x.shape()), " vs weight ",
                                      shape_str(weight.shape())));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != dout))
        throw InvalidInput(concat_msg("linear: bias ", shape_str(bias.shape()),
                                      " does not match dout=", dout));

    std::vector<Tensor<T>> parents = {x, weight};
    if (has_bias) parents.push_back(bias);
    auto out = detail::make_op<T>({N, dout}, std::move(parents),
                                  [N, din, dout, has_bias](TensorNode<T>& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < dout; ++j) {
                    T g = n.grad[static_cast<std::size_t>(i) * dout + j];
                    const T* wr = pw->value.data() + static_cast<std::size_t>(j) * din;
                    T* xr = px->grad.data() + static_cast<std::size_t>(i) * din;
                    for (int k = 0; k < din; ++k) xr[k] += g * wr[k];
                }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < dout; ++j) {
                    T g = n.grad[static_cast<std::size_t>(i) * dout + j];
                    const T* xr = px->value.data() + static_cast<std::size_t>(i) * din;
                    T* wr = pw->grad.data() + static_cast<std::size_t>(j) * din;
                    for (int k = 0; k < din; ++k) wr[k] += g * xr[k];
                }
        }
        if (has_bias && n.parents[2]->requires_grad) {
            auto& pb = n.parents[2];
            pb->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < dout; ++j)
                    pb->grad[j] += n.grad[static_cast<std::size_t>(i) * dout + j];
        }
    });
    auto& o = out.raw_value();
    for (int i = 0; i < N; ++i) {
        const T* xr = x.value().data() + static_cast<std::size_t>(i) * din;
        for (int j = 0; j < dout; ++j) {
            const T* wr = weight.value().data() + static_cast<std::size_t>(j) * din;
            T acc = has_bias ? bias.value()[j] : T(0);
            for (int k = 0; k < din; ++k) acc += wr[k] * xr[k];
            o[static_cast<std::size_t>(i) * dout + j] = acc;
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int padding) {
    if (x.rank() != 4 || kernel.rank() != 4)
        throw InvalidInput(concat_msg("conv2d: expected [N,C,H,W] and [K,C,kh,kw], got ",
                                      shape_str(x.shape()), " and ", shape_str(kernel.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != C)
        throw InvalidInput(concat_msg("conv2d: kernel expects ", kernel.dim(1),
                                      " input channels, tensor has ", C));
    if (stride < 1 || padding < 0)
        throw InvalidInput(concat_msg("conv2d: bad stride/padding ", stride, "/", padding));
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw InvalidInput(concat_msg("conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
                                      H + 2 * padding, "x", W + 2 * padding));
    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != K))
        throw InvalidInput(concat_msg("conv2d: bias ", shape_str(bias.shape()),
                                      " does not match K=", K));

    detail::ConvGeom g{C, H, W, K, OH, OW, kh, kw, stride, padding};
    std::vector<Tensor<T>> parents = {x, kernel};
    if (has_bias) parents.push_back(bias);
    auto out = detail::make_op<T>({N, K, OH, OW}, std::move(parents),
                                  [g, N, has_bias](TensorNode<T>& n) {
        auto& px = n.parents[0];
        auto& pk = n.parents[1];
        const std::size_t in_sz = static_cast<std::size_t>(g.C) * g.H * g.W;
        const std::size_t out_sz = static_cast<std::size_t>(g.K) * g.OH * g.OW;
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < N; ++i)
                detail::conv_scatter(px->grad.data() + i * in_sz, n.grad.data() + i * out_sz,
                                     pk->value.data(), g);
        }
        if (pk->requires_grad) {
            pk->ensure_grad();
            for (int i = 0; i < N; ++i)
                detail::conv_kgrad(pk->grad.data(), n.grad.data() + i * out_sz,
                                   px->value.data() + i * in_sz, g);
        }
        if (has_bias && n.parents[2]->requires_grad) {
            auto& pb = n.parents[2];
            pb->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int k = 0; k < g.K; ++k) {
                    const T* row = n.grad.data() + i * out_sz +
                                   static_cast<std::size_t>(k) * g.OH * g.OW;
                    T acc = 0;
                    for (int j = 0; j < g.OH * g.OW; ++j) acc += row[j];
                    pb->grad[k] += acc;
                }
        }
    });
    auto& o = out.raw_value();
    const std::size_t in_sz = static_cast<std::size_t>(C) * H * W;
    const std::size_t out_sz = static_cast<std::size_t>(K) * OH * OW;
    for (int i = 0; i < N; ++i) {
        T* dst = o.data() + i * out_sz;
        if (has_bias)
            for (int k = 0; k < K; ++k)
                std::fill(dst + static_cast<std::size_t>(k) * OH * OW,
                          dst + static_cast<std::size_t>(k + 1) * OH * OW, bias.value()[k]);
        detail::conv_gather(dst, x.value().data() + i * in_sz, kernel.value().data(), g);
    }
    return out;
}

// Transposed convolution: the forward map is the adjoint of conv2d with the
// same geometry. Kernel layout is [C,K,kh,kw] (input channels first).
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           int stride, int padding) {
    if (x.rank() != 4 || kernel.rank() != 4)
        throw InvalidInput(concat_msg("conv2d_transpose: expected [N,C,H,W] and [C,K,kh,kw], got ",
                                      shape_str(x.shape()), " and ", shape_str(kernel.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(0) != C)
        throw InvalidInput(concat_msg("conv2d_transpose: kernel expects ", kernel.dim(0),
                                      " input channels, tensor has ", C));
    const int OH = (H - 1) * stride - 2 * padding + kh;
    const int OW = (W - 1) * stride - 2 * padding + kw;
    if (stride < 1 || padding < 0 || OH <= 0 || OW <= 0)
        throw InvalidInput(concat_msg("conv2d_transpose: inconsistent geometry (input ", H, "x", W,
                                      ", kernel ", kh, "x", kw, ", stride ", stride, ", padding ",
                                      padding, " gives output ", OH, "x", OW, ")"));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != K))
        throw InvalidInput(concat_msg("conv2d_transpose: bias ", shape_str(bias.shape()),
                                      " does not match K=", K));

    // Geometry seen from the matching conv2d: gather-side input is our output.
    detail::ConvGeom g{K, OH, OW, C, H, W, kh, kw, stride, padding};
    std::vector<Tensor<T>> parents = {x, kernel};
    if (has_bias) parents.push_back(bias);
    auto out = detail::make_op<T>({N, K, OH, OW}, std::move(parents),
                                  [g, N, has_bias](TensorNode<T>& n) {
        auto& px = n.parents[0];
        auto& pk = n.parents[1];
        const std::size_t in_sz = static_cast<std::size_t>(g.K) * g.OH * g.OW;   // C*H*W
        const std::size_t out_sz = static_cast<std::size_t>(g.C) * g.H * g.W;    // K*OH*OW
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < N; ++i)
                detail::conv_gather(px->grad.data() + i * in_sz, n.grad.data() + i * out_sz,
                                    pk->value.data(), g);
        }
        if (pk->requires_grad) {
            pk->ensure_grad();
            for (int i = 0; i < N; ++i)
                detail::conv_kgrad(pk->grad.data(), px->value.data() + i * in_sz,
                                   n.grad.data() + i * out_sz, g);
        }
        if (has_bias && n.parents[2]->requires_grad) {
            auto& pb = n.parents[2];
            pb->ensure_grad();
            for (int i = 0; i < N; ++i)
                for (int k = 0; k < g.C; ++k) {
                    const T* row = n.grad.data() + i * out_sz +
                                   static_cast<std::size_t>(k) * g.H * g.W;
                    T acc = 0;
                    for (int j = 0; j < g.H * g.W; ++j) acc += row[j];
                    pb->grad[k] += acc;
                }
        }
    });
    auto& o = out.raw_value();
    const std::size_t in_sz = static_cast<std::size_t>(C) * H * W;
    const std::size_t out_sz = static_cast<std::size_t>(K) * OH * OW;
    for (int i = 0; i < N; ++i) {
        T* dst = o.data() + i * out_sz;
        if (has_bias)
            for (int k = 0; k < K; ++k)
                std::fill(dst + static_cast<std::size_t>(k) * OH * OW,
                          dst + static_cast<std::size_t>(k + 1) * OH * OW, bias.value()[k]);
        detail::conv_scatter(dst, x.value().data() + i * in_sz, kernel.value().data(), g);
    }
    return out;
}

// --- pooling / reductions ---------------------------------------------------

enum class PoolKind { Max, Avg };

template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind, int window, int stride) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("pool: expected [N,C,H,W], got ", shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (window < 1 || stride < 1)
        throw InvalidInput(concat_msg("pool: bad window/stride ", window, "/", stride));
    if (window > H || window > W)
        throw InvalidInput(concat_msg("pool: window ", window, " larger than input ", H, "x", W));
    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;

    auto out = detail::make_op<T>({N, C, OH, OW}, {x}, nullptr);
    auto& o = out.raw_value();
    std::vector<int> argmax;
    if (kind == PoolKind::Max) argmax.assign(o.size(), 0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.value().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            T* oplane = o.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    if (kind == PoolKind::Max) {
                        int best = (oh * stride) * W + ow * stride;
                        T bv = plane[best];
                        for (int r = 0; r < window; ++r)
                            for (int q = 0; q < window; ++q) {
                                int idx = (oh * stride + r) * W + ow * stride + q;
                                if (plane[idx] > bv) {
                                    bv = plane[idx];
                                    best = idx;
                                }
                            }
                        oplane[oh * OW + ow] = bv;
                        argmax[((static_cast<std::size_t>(n) * C + c) * OH + oh) * OW + ow] = best;
                    } else {
                        double acc = 0;
                        for (int r = 0; r < window; ++r)
                            for (int q = 0; q < window; ++q)
                                acc += plane[(oh * stride + r) * W + ow * stride + q];
                        oplane[oh * OW + ow] = static_cast<T>(acc / (window * window));
                    }
                }
        }
    if (out.node()->requires_grad) {
        out.node()->backprop = [kind, window, stride, N, C, H, W, OH, OW,
                                argmax = std::move(argmax)](TensorNode<T>& nd) {
            auto& p = nd.parents[0];
            if (!p->requires_grad) return;
            p->ensure_grad();
            const T inv = T(1) / (window * window);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* gplane = p->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    const T* og = nd.grad.data() + (static_cast<std::size_t>(n) * C + c) * OH * OW;
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            T g = og[oh * OW + ow];
                            if (kind == PoolKind::Max) {
                                gplane[argmax[((static_cast<std::size_t>(n) * C + c) * OH + oh) *
                                                  OW +
                                              ow]] += g;
                            } else {
                                for (int r = 0; r < window; ++r)
                                    for (int q = 0; q < window; ++q)
                                        gplane[(oh * stride + r) * W + ow * stride + q] += g * inv;
                            }
                        }
                }
        };
    }
    return out;
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& x, PoolKind kind) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("global_pool: expected [N,C,H,W], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    auto out = detail::make_op<T>({N, C, 1, 1}, {x}, nullptr);
    auto& o = out.raw_value();
    std::vector<int> argmax;
    if (kind == PoolKind::Max) argmax.assign(o.size(), 0);
    std::vector<T> scratch;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.value().data() + (static_cast<std::size_t>(n) * C + c) * hw;
            if (kind == PoolKind::Max) {
                int best = 0;
                for (std::size_t i = 1; i < hw; ++i)
                    if (plane[i] > plane[best]) best = static_cast<int>(i);
                o[static_cast<std::size_t>(n) * C + c] = plane[best];
                argmax[static_cast<std::size_t>(n) * C + c] = best;
            } else {
                // canonical (sorted) order: the mean is bitwise independent of
                // any spatial permutation of the plane
                scratch.assign(plane, plane + hw);
                std::sort(scratch.begin(), scratch.end());
                double acc = 0;
                for (T v : scratch) acc += v;
                o[static_cast<std::size_t>(n) * C + c] = static_cast<T>(acc / double(hw));
            }
        }
    if (out.node()->requires_grad) {
        out.node()->backprop = [kind, N, C, hw, argmax = std::move(argmax)](TensorNode<T>& nd) {
            auto& p = nd.parents[0];
            if (!p->requires_grad) return;
            p->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T g = nd.grad[static_cast<std::size_t>(n) * C + c];
                    T* gplane = p->grad.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                    if (kind == PoolKind::Max)
                        gplane[argmax[static_cast<std::size_t>(n) * C + c]] += g;
                    else {
                        T share = g / static_cast<T>(hw);
                        for (std::size_t i = 0; i < hw; ++i) gplane[i] += share;
                    }
                }
        };
    }
    return out;
}

// Spatial mean per (sample, channel): [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> mean_hw(const Tensor<T>& x) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("mean_hw: expected [N,C,H,W], got ", shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    auto out = detail::make_op<T>({N, C}, {x}, [N, C, hw](TensorNode<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < N * C; ++i) {
            T share = nd.grad[i] / static_cast<T>(hw);
            T* g = p->grad.data() + static_cast<std::size_t>(i) * hw;
            for (std::size_t j = 0; j < hw; ++j) g[j] += share;
        }
    });
    auto& o = out.raw_value();
    for (int i = 0; i < N * C; ++i) {
        const T* plane = x.value().data() + static_cast<std::size_t>(i) * hw;
        double acc = 0;
        for (std::size_t j = 0; j < hw; ++j) acc += plane[j];
        o[i] = static_cast<T>(acc / double(hw));
    }
    return out;
}

// Per-position channel statistics: [N,C,H,W] -> [N,2,H,W] (mean map, max map)
template <typename T>
Tensor<T> channel_stats(const Tensor<T>& x) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("channel_stats: expected [N,C,H,W], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    auto out = detail::make_op<T>({N, 2, H, W}, {x}, nullptr);
    auto& o = out.raw_value();
    std::vector<int> argmax(static_cast<std::size_t>(N) * hw, 0);
    std::vector<T> scratch(C);
    for (int n = 0; n < N; ++n) {
        const T* base = x.value().data() + static_cast<std::size_t>(n) * C * hw;
        T* omean = o.data() + static_cast<std::size_t>(n) * 2 * hw;
        T* omax = omean + hw;
        for (std::size_t i = 0; i < hw; ++i) {
            int best = 0;
            T bv = base[i];
            for (int c = 0; c < C; ++c) {
                T v = base[static_cast<std::size_t>(c) * hw + i];
                scratch[c] = v;
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            // sorted order: the mean map is bitwise invariant under any
            // permutation of the input channels
            std::sort(scratch.begin(), scratch.end());
            double acc = 0;
            for (T v : scratch) acc += v;
            omean[i] = static_cast<T>(acc / C);
            omax[i] = bv;
            argmax[static_cast<std::size_t>(n) * hw + i] = best;
        }
    }
    if (out.node()->requires_grad) {
        out.node()->backprop = [N, C, hw, argmax = std::move(argmax)](TensorNode<T>& nd) {
            auto& p = nd.parents[0];
            if (!p->requires_grad) return;
            p->ensure_grad();
            for (int n = 0; n < N; ++n) {
                T* g = p->grad.data() + static_cast<std::size_t>(n) * C * hw;
                const T* gmean = nd.grad.data() + static_cast<std::size_t>(n) * 2 * hw;
                const T* gmax = gmean + hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    T share = gmean[i] / static_cast<T>(C);
                    for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(c) * hw + i] += share;
                    g[static_cast<std::size_t>(argmax[static_cast<std::size_t>(n) * hw + i]) * hw +
                      i] += gmax[i];
                }
            }
        };
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * gate[n,c];  gate shape [N,C] or [N,C,1,1]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("scale_channels: expected [N,C,H,W], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (gate.numel() != static_cast<std::size_t>(N) * C)
        throw InvalidInput(concat_msg("scale_channels: gate ", shape_str(gate.shape()),
                                      " does not provide one value per (n,c) of ",
                                      shape_str(x.shape())));
    auto out = detail::make_op<T>(x.shape(), {x, gate}, [N, C, hw](TensorNode<T>& nd) {
        auto& px = nd.parents[0];
        auto& pg = nd.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < N * C; ++i) {
                T gv = pg->value[i];
                const T* og = nd.grad.data() + static_cast<std::size_t>(i) * hw;
                T* xg = px->grad.data() + static_cast<std::size_t>(i) * hw;
                for (std::size_t j = 0; j < hw; ++j) xg[j] += og[j] * gv;
            }
        }
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int i = 0; i < N * C; ++i) {
                const T* og = nd.grad.data() + static_cast<std::size_t>(i) * hw;
                const T* xv = px->value.data() + static_cast<std::size_t>(i) * hw;
                double acc = 0;
                for (std::size_t j = 0; j < hw; ++j) acc += double(og[j]) * double(xv[j]);
                pg->grad[i] += static_cast<T>(acc);
            }
        }
    });
    auto& o = out.raw_value();
    for (int i = 0; i < N * C; ++i) {
        T gv = gate.value()[i];
        const T* xv = x.value().data() + static_cast<std::size_t>(i) * hw;
        T* ov = o.data() + static_cast<std::size_t>(i) * hw;
        for (std::size_t j = 0; j < hw; ++j) ov[j] = xv[j] * gv;
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * map[n,0,h,w];  map shape [N,1,H,W]
template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& map) {
    if (x.rank() != 4 || map.rank() != 4)
        throw InvalidInput("scale_spatial: expected rank-4 tensors");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (map.dim(0) != N || map.dim(1) != 1 || map.dim(2) != H || map.dim(3) != W)
        throw InvalidInput(concat_msg("scale_spatial: map ", shape_str(map.shape()),
                                      " does not match ", shape_str(x.shape())));
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    auto out = detail::make_op<T>(x.shape(), {x, map}, [N, C, hw](TensorNode<T>& nd) {
        auto& px = nd.parents[0];
        auto& pm = nd.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int n = 0; n < N; ++n) {
                const T* mv = pm->value.data() + static_cast<std::size_t>(n) * hw;
                for (int c = 0; c < C; ++c) {
                    std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
                    for (std::size_t j = 0; j < hw; ++j)
                        px->grad[off + j] += nd.grad[off + j] * mv[j];
                }
            }
        }
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (int n = 0; n < N; ++n) {
                T* mg = pm->grad.data() + static_cast<std::size_t>(n) * hw;
                for (std::size_t j = 0; j < hw; ++j) {
                    double acc = 0;
                    for (int c = 0; c < C; ++c) {
                        std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw + j;
                        acc += double(nd.grad[off]) * double(px->value[off]);
                    }
                    mg[j] += static_cast<T>(acc);
                }
            }
        }
    });
    auto& o = out.raw_value();
    for (int n = 0; n < N; ++n) {
        const T* mv = map.value().data() + static_cast<std::size_t>(n) * hw;
        for (int c = 0; c < C; ++c) {
            std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t j = 0; j < hw; ++j) o[off + j] = x.value()[off + j] * mv[j];
        }
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("upsample_nearest2x: expected [N,C,H,W], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto out = detail::make_op<T>({N, C, 2 * H, 2 * W}, {x}, [N, C, H, W](TensorNode<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < N * C; ++i) {
            const T* og = nd.grad.data() + static_cast<std::size_t>(i) * 4 * H * W;
            T* g = p->grad.data() + static_cast<std::size_t>(i) * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    g[h * W + w] += og[(2 * h) * 2 * W + 2 * w] + og[(2 * h) * 2 * W + 2 * w + 1] +
                                    og[(2 * h + 1) * 2 * W + 2 * w] +
                                    og[(2 * h + 1) * 2 * W + 2 * w + 1];
        }
    });
    auto& o = out.raw_value();
    for (int i = 0; i < N * C; ++i) {
        const T* xv = x.value().data() + static_cast<std::size_t>(i) * H * W;
        T* ov = o.data() + static_cast<std::size_t>(i) * 4 * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                T v = xv[h * W + w];
                ov[(2 * h) * 2 * W + 2 * w] = v;
                ov[(2 * h) * 2 * W + 2 * w + 1] = v;
                ov[(2 * h + 1) * 2 * W + 2 * w] = v;
                ov[(2 * h + 1) * 2 * W + 2 * w + 1] = v;
            }
    }
    return out;
}

// Per-(sample, channel) spatial normalization with learnable per-channel
// affine: y = gain[c] * (x - mean) / sqrt(var + eps) + bias[c]. Statistics
// are computed over one plane at a time, so results do not depend on how
// samples are batched. Planes with fewer than 4 elements pass through
// unchanged: normalizing a 1x1 plane would erase it to a constant.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                        double eps = 1e-5) {
    if (x.rank() != 4)
        throw InvalidInput(concat_msg("instance_norm: expected [N,C,H,W], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (gain.numel() != static_cast<std::size_t>(C) || bias.numel() != static_cast<std::size_t>(C))
        throw InvalidInput(concat_msg("instance_norm: gain ", shape_str(gain.shape()), " / bias ",
                                      shape_str(bias.shape()), " must hold one value per channel of ",
                                      shape_str(x.shape())));

    if (hw < 4) {
        auto out = detail::make_op<T>(x.shape(), {x, gain, bias}, [](TensorNode<T>& nd) {
            auto& p = nd.parents[0];
            if (!p->requires_grad) return;
            p->ensure_grad();
            detail::add_into(p->grad, nd.grad);
        });
        out.raw_value() = x.value();
        return out;
    }

    std::vector<double> mu(static_cast<std::size_t>(N) * C), istd(static_cast<std::size_t>(N) * C);
    for (int i = 0; i < N * C; ++i) {
        const T* plane = x.value().data() + static_cast<std::size_t>(i) * hw;
        double acc = 0;
        for (std::size_t j = 0; j < hw; ++j) acc += plane[j];
        mu[i] = acc / double(hw);
        double var = 0;
        for (std::size_t j = 0; j < hw; ++j) {
            double d = plane[j] - mu[i];
            var += d * d;
        }
        istd[i] = 1.0 / std::sqrt(var / double(hw) + eps);
    }

    auto out = detail::make_op<T>(
        x.shape(), {x, gain, bias},
        [N, C, hw, mu, istd](TensorNode<T>& nd) {
            auto& px = nd.parents[0];
            auto& pg = nd.parents[1];
            auto& pb = nd.parents[2];
            if (px->requires_grad) px->ensure_grad();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int i = 0; i < N * C; ++i) {
                const int c = i % C;
                const double g = pg->value[c], m = mu[i], is = istd[i];
                const T* xv = px->value.data() + static_cast<std::size_t>(i) * hw;
                const T* og = nd.grad.data() + static_cast<std::size_t>(i) * hw;
                double sg = 0, sgx = 0;  // sums of dL/dy and dL/dy * xhat
                for (std::size_t j = 0; j < hw; ++j) {
                    sg += og[j];
                    sgx += double(og[j]) * (xv[j] - m) * is;
                }
                if (pb->requires_grad) pb->grad[c] += static_cast<T>(sg);
                if (pg->requires_grad) pg->grad[c] += static_cast<T>(sgx);
                if (px->requires_grad) {
                    T* xg = px->grad.data() + static_cast<std::size_t>(i) * hw;
                    const double k = g * is, a = sg / double(hw), b = sgx / double(hw);
                    for (std::size_t j = 0; j < hw; ++j) {
                        double xh = (xv[j] - m) * is;
                        xg[j] += static_cast<T>(k * (og[j] - a - xh * b));
                    }
                }
            }
        });
    auto& o = out.raw_value();
    for (int i = 0; i < N * C; ++i) {
        const int c = i % C;
        const double g = gain.value()[c], b = bias.value()[c], m = mu[i], is = istd[i];
        const T* xv = x.value().data() + static_cast<std::size_t>(i) * hw;
        T* ov = o.data() + static_cast<std::size_t>(i) * hw;
        for (std::size_t j = 0; j < hw; ++j)
            ov[j] = static_cast<T>(g * ((xv[j] - m) * is) + b);
    }
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    auto out = detail::make_op<T>({1}, {x}, [n](TensorNode<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        T share = nd.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) p->grad[i] += share;
    });
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x.value()[i];
    out.raw_value()[0] = static_cast<T>(acc / double(n));
    return out;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    auto out = detail::make_op<T>({1}, {x}, [n](TensorNode<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) p->grad[i] += nd.grad[0];
    });
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x.value()[i];
    out.raw_value()[0] = static_cast<T>(acc);
    return out;
}

// [N,K] -> [N], summing each row
template <typename T>
Tensor<T> reduce_sum_rows(const Tensor<T>& x) {
    if (x.rank() != 2)
        throw InvalidInput(concat_msg("reduce_sum_rows: expected [N,K], got ",
                                      shape_str(x.shape())));
    const int N = x.dim(0), K = x.dim(1);
    auto out = detail::make_op<T>({N}, {x}, [N, K](TensorNode<T>& nd) {
        auto& p = nd.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < N; ++i) {
            T g = nd.grad[i];
            T* row = p->grad.data() + static_cast<std::size_t>(i) * K;
            for (int j = 0; j < K; ++j) row[j] += g;
        }
    });
    auto& o = out.raw_value();
    for (int i = 0; i < N; ++i) {
        const T* row = x.value().data() + static_cast<std::size_t>(i) * K;
        double acc = 0;
        for (int j = 0; j < K; ++j) acc += row[j];
        o[i] = static_cast<T>(acc);
    }
    return out;
}

// --- backward ----------------------------------------------------------------

// Linearized reverse schedule over the nodes reachable from one root. Confined
// to the thread that recorded it; must not outlive the root tensor.
template <typename T>
class Tape {
public:
    static Tape record(const Tensor<T>& root) {
        if (root.numel() != 1)
            throw InvalidInput(concat_msg("backward: loss must be scalar, got ",
                                          shape_str(root.shape())));
        Tape t;
        t.root_ = root.node();
        if (!root.node()->requires_grad) return t;
        // iterative post-order DFS; order_ ends child-before-parent
        std::unordered_set<TensorNode<T>*> seen;
        std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
        stack.emplace_back(root.node(), 0);
        seen.insert(root.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            bool descended = false;
            while (next < node->parents.size()) {
                TensorNode<T>* p = node->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                    descended = true;
                    break;
                }
            }
            if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
                t.order_.push_back(stack.back().first);
                stack.pop_back();
            }
        }
        return t;
    }

    // Seeds d(root)/d(root) = 1 and visits each recorded operation once.
    void backward() {
        if (order_.empty()) return;
        root_->ensure_grad();
        root_->grad[0] += T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it)
            if ((*it)->backprop) (*it)->backprop(**it);
    }

    std::size_t size() const { return order_.size(); }

private:
    TensorNode<T>* root_ = nullptr;
    std::vector<TensorNode<T>*> order_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    Tape<T>::record(loss).backward();
}

// --- initialization helpers ---------------------------------------------------

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0) {
    auto t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.raw_value()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    auto t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.raw_value()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace ca2n
