#pragma once

// Neural-network primitives: convolution (full and depthwise), batch
// normalization, activations, pooling, bilinear upsampling and channel
// plumbing. Every op carries its own backward rule.

#include <optional>

#include "rhanet/tensor.hpp"

namespace rhanet {
namespace ops {

template <typename T>
struct ConvParams {
    Tensor<T> weight; // C_out×C_in×k×k (depthwise: C×1×k×k)
    std::optional<Tensor<T>> bias; // length C_out
    int stride = 1;
    int padding = 0;
};

namespace detail {

using rhanet::detail::make_op_result;
using rhanet::detail::TensorNode;

inline void require_rank4(const Shape& s, const char* op) {
    if (s.size() != 4)
        throw ShapeError(std::string(op) + ": expected N×C×H×W input, got " + shape_str(s));
}

// Valid output range [lo, hi] for one kernel offset so that the source index
// stride·o − pad + k stays inside [0, extent).
inline std::pair<int, int> conv_range(int out_extent, int in_extent, int k, int stride, int pad) {
    int lo = 0;
    while (lo < out_extent && lo * stride - pad + k < 0) ++lo;
    int hi = out_extent - 1;
    while (hi >= 0 && hi * stride - pad + k >= in_extent) --hi;
    return {lo, hi};
}

} // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    detail::require_rank4(x.shape(), "conv2d");
    const Shape& ws = p.weight.shape();
    if (ws.size() != 4 || ws[2] != ws[3])
        throw ShapeError("conv2d: expected square C_out×C_in×k×k weight, got " + shape_str(ws));
    const int N = x.dim(0), C_in = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int C_out = ws[0], k = ws[2];
    if (ws[1] != C_in)
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(ws));
    if (p.bias && (p.bias->rank() != 1 || p.bias->dim(0) != C_out))
        throw ShapeError("conv2d: bias " + shape_str(p.bias->shape()) + " does not match C_out=" +
                         std::to_string(C_out));
    const int s = p.stride, pad = p.padding;
    if (s < 1) throw ValueError("conv2d: stride must be positive");
    if ((H + 2 * pad - k) % s != 0 || (W + 2 * pad - k) % s != 0)
        throw ShapeError("conv2d: non-integral output extent for input " + shape_str(x.shape()) +
                         ", kernel " + std::to_string(k) + ", stride " + std::to_string(s) +
                         ", padding " + std::to_string(pad));
    const int Ho = (H + 2 * pad - k) / s + 1;
    const int Wo = (W + 2 * pad - k) / s + 1;
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                         shape_str(x.shape()));

    std::vector<std::pair<int, int>> hr(static_cast<size_t>(k)), wr(static_cast<size_t>(k));
    for (int kk = 0; kk < k; ++kk) {
        hr[static_cast<size_t>(kk)] = detail::conv_range(Ho, H, kk, s, pad);
        wr[static_cast<size_t>(kk)] = detail::conv_range(Wo, W, kk, s, pad);
    }

    std::vector<T> out(static_cast<size_t>(N) * C_out * Ho * Wo, T(0));
    const T* xd = x.values().data();
    const T* wd = p.weight.values().data();
    const T* bd = p.bias ? p.bias->values().data() : nullptr;
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < C_out; ++co) {
            T* plane = out.data() + (static_cast<int64_t>(n) * C_out + co) * Ho * Wo;
            if (bd) {
                const T bv = bd[co];
                for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) plane[i] = bv;
            }
            for (int ci = 0; ci < C_in; ++ci) {
                const T* xplane = xd + (static_cast<int64_t>(n) * C_in + ci) * H * W;
                const T* wk = wd + (static_cast<int64_t>(co) * C_in + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T wv = wk[kh * k + kw];
                        if (wv == T(0)) continue;
                        const auto [oh0, oh1] = hr[static_cast<size_t>(kh)];
                        const auto [ow0, ow1] = wr[static_cast<size_t>(kw)];
                        for (int oh = oh0; oh <= oh1; ++oh) {
                            const int ih = oh * s - pad + kh;
                            const T* xrow = xplane + static_cast<int64_t>(ih) * W - pad + kw;
                            T* orow = plane + static_cast<int64_t>(oh) * Wo;
                            for (int ow = ow0; ow <= ow1; ++ow) orow[ow] += wv * xrow[ow * s];
                        }
                    }
                }
            }
        }
    }

    auto xn = x.node();
    auto wn = p.weight.node();
    std::shared_ptr<rhanet::detail::TensorNode<T>> bn = p.bias ? p.bias->node() : nullptr;
    auto rule = [=](rhanet::detail::TensorNode<T>& o) {
        const T* gy = o.grad.data();
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < C_out; ++co) {
                    const T* gplane = gy + (static_cast<int64_t>(n) * C_out + co) * Ho * Wo;
                    T acc = T(0);
                    for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i) acc += gplane[i];
                    bn->grad[static_cast<size_t>(co)] += acc;
                }
        }
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        if (!need_x && !need_w) return;
        if (need_x) xn->ensure_grad();
        if (need_w) wn->ensure_grad();
        const T* xd2 = xn->values.data();
        const T* wd2 = wn->values.data();
        for (int n = 0; n < N; ++n) {
            for (int co = 0; co < C_out; ++co) {
                const T* gplane = gy + (static_cast<int64_t>(n) * C_out + co) * Ho * Wo;
                for (int ci = 0; ci < C_in; ++ci) {
                    const T* xplane = xd2 + (static_cast<int64_t>(n) * C_in + ci) * H * W;
                    T* gxplane =
                        need_x ? xn->grad.data() + (static_cast<int64_t>(n) * C_in + ci) * H * W
                               : nullptr;
                    const int64_t wbase = (static_cast<int64_t>(co) * C_in + ci) * k * k;
                    for (int kh = 0; kh < k; ++kh) {
                        for (int kw = 0; kw < k; ++kw) {
                            const auto [oh0, oh1] = hr[static_cast<size_t>(kh)];
                            const auto [ow0, ow1] = wr[static_cast<size_t>(kw)];
                            const T wv = wd2[wbase + kh * k + kw];
                            T wacc = T(0);
                            for (int oh = oh0; oh <= oh1; ++oh) {
                                const int ih = oh * s - pad + kh;
                                const T* grow = gplane + static_cast<int64_t>(oh) * Wo;
                                const int64_t xoff = static_cast<int64_t>(ih) * W - pad + kw;
                                if (need_w) {
                                    const T* xrow = xplane + xoff;
                                    for (int ow = ow0; ow <= ow1; ++ow)
                                        wacc += grow[ow] * xrow[ow * s];
                                }
                                if (need_x) {
                                    T* gxrow = gxplane + xoff;
                                    for (int ow = ow0; ow <= ow1; ++ow)
                                        gxrow[ow * s] += grow[ow] * wv;
                                }
                            }
                            if (need_w) wn->grad[static_cast<size_t>(wbase + kh * k + kw)] += wacc;
                        }
                    }
                }
            }
        }
    };

    std::vector<Tensor<T>> inputs{x, p.weight};
    if (p.bias) inputs.push_back(*p.bias);
    return detail::make_op_result<T>({N, C_out, Ho, Wo}, std::move(out), inputs, rule, "conv2d");
}

// Per-channel convolution: output channel c sees only input channel c.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    detail::require_rank4(x.shape(), "depthwise_conv2d");
    const Shape& ws = p.weight.shape();
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (ws.size() != 4 || ws[1] != 1 || ws[2] != ws[3])
        throw ShapeError("depthwise_conv2d: expected C×1×k×k weight, got " + shape_str(ws));
    if (ws[0] != C)
        throw ShapeError("depthwise_conv2d: weight channels " + shape_str(ws) +
                         " do not match input " + shape_str(x.shape()));
    const int k = ws[2];
    if (p.stride != 1 || p.padding != (k - 1) / 2)
        throw ValueError("depthwise_conv2d: requires stride 1 and padding (k-1)/2");
    if (p.bias)
        throw ValueError("depthwise_conv2d: bias unsupported (batch norm follows)");
    const int pad = p.padding;

    std::vector<std::pair<int, int>> hr(static_cast<size_t>(k)), wr(static_cast<size_t>(k));
    for (int kk = 0; kk < k; ++kk) {
        hr[static_cast<size_t>(kk)] = detail::conv_range(H, H, kk, 1, pad);
        wr[static_cast<size_t>(kk)] = detail::conv_range(W, W, kk, 1, pad);
    }

    std::vector<T> out(x.values().size(), T(0));
    const T* xd = x.values().data();
    const T* wd = p.weight.values().data();
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* xplane = xd + (static_cast<int64_t>(n) * C + c) * H * W;
            T* plane = out.data() + (static_cast<int64_t>(n) * C + c) * H * W;
            const T* wk = wd + static_cast<int64_t>(c) * k * k;
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    const T wv = wk[kh * k + kw];
                    if (wv == T(0)) continue;
                    const auto [oh0, oh1] = hr[static_cast<size_t>(kh)];
                    const auto [ow0, ow1] = wr[static_cast<size_t>(kw)];
                    for (int oh = oh0; oh <= oh1; ++oh) {
                        const T* xrow = xplane + static_cast<int64_t>(oh - pad + kh) * W - pad + kw;
                        T* orow = plane + static_cast<int64_t>(oh) * W;
                        for (int ow = ow0; ow <= ow1; ++ow) orow[ow] += wv * xrow[ow];
                    }
                }
        }
    }

    auto xn = x.node();
    auto wn = p.weight.node();
    auto rule = [=](rhanet::detail::TensorNode<T>& o) {
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        if (!need_x && !need_w) return;
        if (need_x) xn->ensure_grad();
        if (need_w) wn->ensure_grad();
        const T* gy = o.grad.data();
        const T* xd2 = xn->values.data();
        const T* wd2 = wn->values.data();
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const int64_t off = (static_cast<int64_t>(n) * C + c) * H * W;
                const T* gplane = gy + off;
                const T* xplane = xd2 + off;
                T* gxplane = need_x ? xn->grad.data() + off : nullptr;
                const int64_t wbase = static_cast<int64_t>(c) * k * k;
                for (int kh = 0; kh < k; ++kh)
                    for (int kw = 0; kw < k; ++kw) {
                        const auto [oh0, oh1] = hr[static_cast<size_t>(kh)];
                        const auto [ow0, ow1] = wr[static_cast<size_t>(kw)];
                        const T wv = wd2[wbase + kh * k + kw];
                        T wacc = T(0);
                        for (int oh = oh0; oh <= oh1; ++oh) {
                            const int64_t xoff = static_cast<int64_t>(oh - pad + kh) * W - pad + kw;
                            const T* grow = gplane + static_cast<int64_t>(oh) * W;
                            if (need_w) {
                                const T* xrow = xplane + xoff;
                                for (int ow = ow0; ow <= ow1; ++ow) wacc += grow[ow] * xrow[ow];
                            }
                            if (need_x) {
                                T* gxrow = gxplane + xoff;
                                for (int ow = ow0; ow <= ow1; ++ow) gxrow[ow] += grow[ow] * wv;
                            }
                        }
                        if (need_w) wn->grad[static_cast<size_t>(wbase + kh * k + kw)] += wacc;
                    }
            }
        }
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x, p.weight}, rule,
                                     "depthwise_conv2d");
}

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;        // learnable scale, length C
    Tensor<T> beta;         // learnable shift, length C
    Tensor<T> running_mean; // length C, not learnable
    Tensor<T> running_var;  // length C, not learnable
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    explicit BatchNormState(int channels = 0)
        : gamma(Shape{channels}, T(1)),
          beta(Shape{channels}, T(0)),
          running_mean(Shape{channels}, T(0)),
          running_var(Shape{channels}, T(1)) {}
};

// Training mode normalizes by batch statistics (biased variance) and updates
// the running estimates in place; inference mode is a per-channel affine map
// from the running statistics.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& s, bool training) {
    detail::require_rank4(x.shape(), "batchnorm2d");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (s.gamma.dim(0) != C)
        throw ShapeError("batchnorm2d: state for " + std::to_string(s.gamma.dim(0)) +
                         " channels applied to input " + shape_str(x.shape()));
    const int64_t m = static_cast<int64_t>(N) * H * W;
    const int64_t plane = static_cast<int64_t>(H) * W;
    const T* xd = x.values().data();
    const T* gd = s.gamma.values().data();
    const T* bd = s.beta.values().data();

    std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
    if (training) {
        if (m < 2)
            throw ValueError("batchnorm2d: training mode needs at least 2 values per channel, got " +
                             std::to_string(m));
        auto& rm = s.running_mean.values();
        auto& rv = s.running_var.values();
        for (int c = 0; c < C; ++c) {
            T mu = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = xd + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) mu += p[i];
            }
            mu /= static_cast<T>(m);
            T var = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = xd + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            mean[static_cast<size_t>(c)] = mu;
            invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(var + s.epsilon);
            rm[static_cast<size_t>(c)] = (T(1) - s.momentum) * rm[static_cast<size_t>(c)] + s.momentum * mu;
            rv[static_cast<size_t>(c)] = (T(1) - s.momentum) * rv[static_cast<size_t>(c)] + s.momentum * var;
        }
    } else {
        const auto& rm = s.running_mean.values();
        const auto& rv = s.running_var.values();
        for (int c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = rm[static_cast<size_t>(c)];
            invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(rv[static_cast<size_t>(c)] + s.epsilon);
        }
    }

    std::vector<T> out(x.values().size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
            const T mu = mean[static_cast<size_t>(c)];
            const T is = invstd[static_cast<size_t>(c)];
            const T ga = gd[c], be = bd[c];
            for (int64_t i = 0; i < plane; ++i) out[static_cast<size_t>(off + i)] = ga * (xd[off + i] - mu) * is + be;
        }

    auto xn = x.node();
    auto gn = s.gamma.node();
    auto bn = s.beta.node();
    auto rule = [=](rhanet::detail::TensorNode<T>& o) {
        const bool need_x = xn->requires_grad;
        const bool need_g = gn->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_x) xn->ensure_grad();
        if (need_g) gn->ensure_grad();
        if (need_b) bn->ensure_grad();
        const T* gy = o.grad.data();
        const T* xd2 = xn->values.data();
        for (int c = 0; c < C; ++c) {
            const T mu = mean[static_cast<size_t>(c)];
            const T is = invstd[static_cast<size_t>(c)];
            T sum_gy = T(0), sum_gy_xhat = T(0);
            for (int n = 0; n < N; ++n) {
                const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T g = gy[off + i];
                    sum_gy += g;
                    sum_gy_xhat += g * (xd2[off + i] - mu) * is;
                }
            }
            if (need_b) bn->grad[static_cast<size_t>(c)] += sum_gy;
            if (need_g) gn->grad[static_cast<size_t>(c)] += sum_gy_xhat;
            if (need_x) {
                const T ga = gn->values[static_cast<size_t>(c)];
                if (training) {
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (int n = 0; n < N; ++n) {
                        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const T xhat = (xd2[off + i] - mu) * is;
                            xn->grad[static_cast<size_t>(off + i)] +=
                                ga * is * (gy[off + i] - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i)
                            xn->grad[static_cast<size_t>(off + i)] += ga * is * gy[off + i];
                    }
                }
            }
        }
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x, s.gamma, s.beta}, rule,
                                     "batchnorm2d");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.values().size());
    const auto& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    auto xn = x.node();
    auto rule = [xn](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
            if (xn->values[i] > T(0)) xn->grad[i] += o.grad[i];
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x}, rule, "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.values().size());
    const auto& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    auto xn = x.node();
    auto rule = [xn](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const T y = o.values[i];
            xn->grad[i] += o.grad[i] * y * (T(1) - y);
        }
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x}, rule, "sigmoid");
}

// Numerically stable softmax along one axis (per-slice max subtracted).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int rank = x.rank();
    if (axis < 0 || axis >= rank)
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= x.dim(d);
    const int64_t K = x.dim(axis);

    std::vector<T> out(x.values().size());
    const T* xd = x.values().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * K * inner + i;
            T mx = xd[base];
            for (int64_t k = 1; k < K; ++k) mx = std::max(mx, xd[base + k * inner]);
            T z = T(0);
            for (int64_t k = 0; k < K; ++k) {
                const T e = std::exp(xd[base + k * inner] - mx);
                out[static_cast<size_t>(base + k * inner)] = e;
                z += e;
            }
            for (int64_t k = 0; k < K; ++k) out[static_cast<size_t>(base + k * inner)] /= z;
        }

    auto xn = x.node();
    auto rule = [xn, outer, inner, K](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t ot = 0; ot < outer; ++ot)
            for (int64_t i = 0; i < inner; ++i) {
                const int64_t base = ot * K * inner + i;
                T dot = T(0);
                for (int64_t k = 0; k < K; ++k)
                    dot += o.grad[static_cast<size_t>(base + k * inner)] *
                           o.values[static_cast<size_t>(base + k * inner)];
                for (int64_t k = 0; k < K; ++k) {
                    const size_t idx = static_cast<size_t>(base + k * inner);
                    xn->grad[idx] += (o.grad[idx] - dot) * o.values[idx];
                }
            }
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x}, rule, "softmax");
}

// 2×2 max pooling, stride 2. Gradient routes to the window argmax; ties keep
// the first element in row-major window order.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
    detail::require_rank4(x.shape(), "maxpool2x2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2x2: spatial extents must be even, got " + shape_str(x.shape()));
    const int Ho = H / 2, Wo = W / 2;
    std::vector<T> out(static_cast<size_t>(N) * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
    const T* xd = x.values().data();
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xplane = xd + static_cast<int64_t>(nc) * H * W;
        T* oplane = out.data() + static_cast<int64_t>(nc) * Ho * Wo;
        int64_t* aplane = argmax->data() + static_cast<int64_t>(nc) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                const int64_t base = static_cast<int64_t>(2 * oh) * W + 2 * ow;
                int64_t best = base;
                T bv = xplane[base];
                const int64_t cands[3] = {base + 1, base + W, base + W + 1};
                for (int64_t c : cands)
                    if (xplane[c] > bv) {
                        bv = xplane[c];
                        best = c;
                    }
                oplane[static_cast<int64_t>(oh) * Wo + ow] = bv;
                aplane[static_cast<int64_t>(oh) * Wo + ow] = static_cast<int64_t>(nc) * H * W + best;
            }
    }
    auto xn = x.node();
    auto rule = [xn, argmax](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
            xn->grad[static_cast<size_t>((*argmax)[i])] += o.grad[i];
    };
    return detail::make_op_result<T>({N, C, Ho, Wo}, std::move(out), {x}, rule, "maxpool2x2");
}

// Per-channel spatial mean, N×C×H×W → N×C×1×1. Identity on 1×1 maps, which
// also realizes the average pooling applied to already-squeezed maps.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    detail::require_rank4(x.shape(), "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(N) * C);
    const T* xd = x.values().data();
    for (int nc = 0; nc < N * C; ++nc) {
        T acc = T(0);
        const T* p = xd + static_cast<int64_t>(nc) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        out[static_cast<size_t>(nc)] = acc / static_cast<T>(plane);
    }
    auto xn = x.node();
    auto rule = [xn, plane](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T inv = T(1) / static_cast<T>(plane);
        for (size_t nc = 0; nc < o.grad.size(); ++nc) {
            const T g = o.grad[nc] * inv;
            T* p = xn->grad.data() + static_cast<int64_t>(nc) * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] += g;
        }
    };
    return detail::make_op_result<T>({N, C, 1, 1}, std::move(out), {x}, rule, "global_avg_pool");
}

namespace detail {

// Half-pixel-center sampling table for scale factor 2: output i reads source
// (i+0.5)/2 − 0.5, clamped to the borders.
template <typename T>
struct UpsampleAxis {
    std::vector<int> lo, hi;
    std::vector<T> frac;
    explicit UpsampleAxis(int extent) {
        const int out = 2 * extent;
        lo.resize(static_cast<size_t>(out));
        hi.resize(static_cast<size_t>(out));
        frac.resize(static_cast<size_t>(out));
        for (int i = 0; i < out; ++i) {
            T src = (static_cast<T>(i) + T(0.5)) / T(2) - T(0.5);
            src = std::min(std::max(src, T(0)), static_cast<T>(extent - 1));
            const int l = static_cast<int>(std::floor(src));
            lo[static_cast<size_t>(i)] = l;
            hi[static_cast<size_t>(i)] = std::min(l + 1, extent - 1);
            frac[static_cast<size_t>(i)] = src - static_cast<T>(l);
        }
    }
};

} // namespace detail

template <typename T>
Tensor<T> bilinear_upsample_x2(const Tensor<T>& x) {
    detail::require_rank4(x.shape(), "bilinear_upsample_x2");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = 2 * H, Wo = 2 * W;
    const detail::UpsampleAxis<T> ah(H), aw(W);
    std::vector<T> out(static_cast<size_t>(N) * C * Ho * Wo);
    const T* xd = x.values().data();
    for (int nc = 0; nc < N * C; ++nc) {
        const T* xplane = xd + static_cast<int64_t>(nc) * H * W;
        T* oplane = out.data() + static_cast<int64_t>(nc) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
            const int hl = ah.lo[static_cast<size_t>(oh)], hh = ah.hi[static_cast<size_t>(oh)];
            const T fh = ah.frac[static_cast<size_t>(oh)];
            const T* row_l = xplane + static_cast<int64_t>(hl) * W;
            const T* row_h = xplane + static_cast<int64_t>(hh) * W;
            T* orow = oplane + static_cast<int64_t>(oh) * Wo;
            for (int ow = 0; ow < Wo; ++ow) {
                const int wl = aw.lo[static_cast<size_t>(ow)], wh = aw.hi[static_cast<size_t>(ow)];
                const T fw = aw.frac[static_cast<size_t>(ow)];
                const T top = row_l[wl] * (T(1) - fw) + row_l[wh] * fw;
                const T bot = row_h[wl] * (T(1) - fw) + row_h[wh] * fw;
                orow[ow] = top * (T(1) - fh) + bot * fh;
            }
        }
    }
    auto xn = x.node();
    auto rule = [xn, N, C, H, W, Ho, Wo](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const detail::UpsampleAxis<T> ah(H), aw(W);
        const T* gy = o.grad.data();
        for (int nc = 0; nc < N * C; ++nc) {
            T* gxplane = xn->grad.data() + static_cast<int64_t>(nc) * H * W;
            const T* gplane = gy + static_cast<int64_t>(nc) * Ho * Wo;
            for (int oh = 0; oh < Ho; ++oh) {
                const int hl = ah.lo[static_cast<size_t>(oh)], hh = ah.hi[static_cast<size_t>(oh)];
                const T fh = ah.frac[static_cast<size_t>(oh)];
                for (int ow = 0; ow < Wo; ++ow) {
                    const int wl = aw.lo[static_cast<size_t>(ow)], wh = aw.hi[static_cast<size_t>(ow)];
                    const T fw = aw.frac[static_cast<size_t>(ow)];
                    const T g = gplane[static_cast<int64_t>(oh) * Wo + ow];
                    gxplane[static_cast<int64_t>(hl) * W + wl] += g * (T(1) - fh) * (T(1) - fw);
                    gxplane[static_cast<int64_t>(hl) * W + wh] += g * (T(1) - fh) * fw;
                    gxplane[static_cast<int64_t>(hh) * W + wl] += g * fh * (T(1) - fw);
                    gxplane[static_cast<int64_t>(hh) * W + wh] += g * fh * fw;
                }
            }
        }
    };
    return detail::make_op_result<T>({N, C, Ho, Wo}, std::move(out), {x}, rule,
                                     "bilinear_upsample_x2");
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank4(a.shape(), "concat_channels");
    detail::require_rank4(b.shape(), "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ outside the channel axis");
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    const int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(N) * (Ca + Cb) * plane);
    const T* ad = a.values().data();
    const T* bd = b.values().data();
    for (int n = 0; n < N; ++n) {
        std::copy(ad + static_cast<int64_t>(n) * Ca * plane,
                  ad + static_cast<int64_t>(n + 1) * Ca * plane,
                  out.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane);
        std::copy(bd + static_cast<int64_t>(n) * Cb * plane,
                  bd + static_cast<int64_t>(n + 1) * Cb * plane,
                  out.data() + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane);
    }
    auto an = a.node();
    auto bn = b.node();
    auto rule = [an, bn, N, Ca, Cb, plane](rhanet::detail::TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < static_cast<int64_t>(Ca) * plane; ++i)
                    an->grad[static_cast<size_t>(static_cast<int64_t>(n) * Ca * plane + i)] +=
                        o.grad[static_cast<size_t>(static_cast<int64_t>(n) * (Ca + Cb) * plane + i)];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < static_cast<int64_t>(Cb) * plane; ++i)
                    bn->grad[static_cast<size_t>(static_cast<int64_t>(n) * Cb * plane + i)] +=
                        o.grad[static_cast<size_t>((static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane + i)];
        }
    };
    return detail::make_op_result<T>({N, Ca + Cb, H, W}, std::move(out), {a, b}, rule,
                                     "concat_channels");
}

// Channel range [c0, c1) of an N×C×H×W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
    detail::require_rank4(x.shape(), "slice_channels");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(x.shape()));
    const int Cs = c1 - c0;
    const int64_t plane = static_cast<int64_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(N) * Cs * plane);
    const T* xd = x.values().data();
    for (int n = 0; n < N; ++n)
        std::copy(xd + (static_cast<int64_t>(n) * C + c0) * plane,
                  xd + (static_cast<int64_t>(n) * C + c1) * plane,
                  out.data() + static_cast<int64_t>(n) * Cs * plane);
    auto xn = x.node();
    auto rule = [xn, N, C, c0, Cs, plane](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < static_cast<int64_t>(Cs) * plane; ++i)
                xn->grad[static_cast<size_t>((static_cast<int64_t>(n) * C + c0) * plane + i)] +=
                    o.grad[static_cast<size_t>(static_cast<int64_t>(n) * Cs * plane + i)];
    };
    return detail::make_op_result<T>({N, Cs, H, W}, std::move(out), {x}, rule, "slice_channels");
}

// Reinterprets the value buffer under a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                         " changes the element count");
    auto xn = x.node();
    std::vector<T> out(x.values());
    auto rule = [xn](rhanet::detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    };
    return detail::make_op_result<T>(std::move(new_shape), std::move(out), {x}, rule, "reshape");
}

} // namespace ops
} // namespace rhanet
