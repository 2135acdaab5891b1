#pragma once

// Layer primitives: matmul/linear, conv2d, batch norm, pooling, upsampling,
// channel concat/split and the broadcast helpers the attention blocks need.

#include <cstdio>

#include "fbc/ops.hpp"

namespace fbc {

template <class T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2) {
        throw ShapeError("matmul expects 2-d tensors");
    }
    const std::int64_t m = a->shape[0];
    const std::int64_t k = a->shape[1];
    const std::int64_t n = b->shape[1];
    if (b->shape[0] != k) {
        throw ShapeError("matmul: inner dimensions mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    std::vector<T> d(static_cast<std::size_t>(m * n), T(0));
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a->data[static_cast<std::size_t>(i * k + p)];
            const T* brow = b->data.data() + p * n;
            T* orow = d.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    count_macs(static_cast<std::uint64_t>(m) * k * n);
    ensure_all_finite(d, "matmul");
    const bool rg = grad_enabled() && (a->requires_grad || b->requires_grad);
    auto out = make_node<T>(Shape{m, n}, std::move(d), rg);
    if (rg) {
        out->parents = {a, b};
        out->backprop = [a, b, m, k, n](TensorT<T>& self) {
            if (a->requires_grad) {
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t p = 0; p < k; ++p) {
                        T acc = T(0);
                        const T* grow = self.grad.data() + i * n;
                        const T* brow = b->data.data() + p * n;
                        for (std::int64_t j = 0; j < n; ++j) {
                            acc += grow[j] * brow[j];
                        }
                        a->grad[static_cast<std::size_t>(i * k + p)] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                for (std::int64_t i = 0; i < m; ++i) {
                    const T* grow = self.grad.data() + i * n;
                    for (std::int64_t p = 0; p < k; ++p) {
                        const T av = a->data[static_cast<std::size_t>(i * k + p)];
                        T* brow = b->grad.data() + p * n;
                        for (std::int64_t j = 0; j < n; ++j) {
                            brow[j] += av * grow[j];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// y = x * w^T + b with x:[N,I], w:[O,I], b:[O] (bias optional).
template <class T>
TensorPtr<T> linear(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2) {
        throw ShapeError("linear expects x:[N,I] and w:[O,I]");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t in = x->shape[1];
    const std::int64_t outf = w->shape[0];
    if (w->shape[1] != in) {
        throw ShapeError("linear: weight shape " + shape_str(w->shape) + " incompatible with x " +
                         shape_str(x->shape));
    }
    if (b) {
        require_shape(b, Shape{outf}, "linear bias");
    }
    std::vector<T> d(static_cast<std::size_t>(n * outf));
    for (std::int64_t i = 0; i < n; ++i) {
        const T* xrow = x->data.data() + i * in;
        for (std::int64_t o = 0; o < outf; ++o) {
            const T* wrow = w->data.data() + o * in;
            T acc = b ? b->data[static_cast<std::size_t>(o)] : T(0);
            for (std::int64_t p = 0; p < in; ++p) {
                acc += xrow[p] * wrow[p];
            }
            d[static_cast<std::size_t>(i * outf + o)] = acc;
        }
    }
    count_macs(static_cast<std::uint64_t>(n) * outf * in);
    ensure_all_finite(d, "linear");
    const bool rg =
        grad_enabled() && (x->requires_grad || w->requires_grad || (b && b->requires_grad));
    auto out = make_node<T>(Shape{n, outf}, std::move(d), rg);
    if (rg) {
        out->parents = {x, w};
        if (b) {
            out->parents.push_back(b);
        }
        out->backprop = [x, w, b, n, in, outf](TensorT<T>& self) {
            if (x->requires_grad) {
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* grow = self.grad.data() + i * outf;
                    T* xgrow = x->grad.data() + i * in;
                    for (std::int64_t o = 0; o < outf; ++o) {
                        const T g = grow[o];
                        const T* wrow = w->data.data() + o * in;
                        for (std::int64_t p = 0; p < in; ++p) {
                            xgrow[p] += g * wrow[p];
                        }
                    }
                }
            }
            if (w->requires_grad) {
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* grow = self.grad.data() + i * outf;
                    const T* xrow = x->data.data() + i * in;
                    for (std::int64_t o = 0; o < outf; ++o) {
                        const T g = grow[o];
                        T* wgrow = w->grad.data() + o * in;
                        for (std::int64_t p = 0; p < in; ++p) {
                            wgrow[p] += g * xrow[p];
                        }
                    }
                }
            }
            if (b && b->requires_grad) {
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* grow = self.grad.data() + i * outf;
                    for (std::int64_t o = 0; o < outf; ++o) {
                        b->grad[static_cast<std::size_t>(o)] += grow[o];
                    }
                }
            }
        };
    }
    return out;
}

namespace detail {

// Copies one sample of x:[N,C,H,W] into a zero-padded [C,Hp,Wp] buffer.
template <class T>
void fill_padded(const std::vector<T>& xdata, std::int64_t n, std::int64_t c_in, std::int64_t h,
                 std::int64_t w, std::int64_t pad, std::vector<T>& xp) {
    const std::int64_t hp = h + 2 * pad;
    const std::int64_t wp = w + 2 * pad;
    std::fill(xp.begin(), xp.end(), T(0));
    const T* src_base = xdata.data() + n * c_in * h * w;
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (std::int64_t row = 0; row < h; ++row) {
            const T* src = src_base + (ci * h + row) * w;
            T* dst = xp.data() + (ci * hp + row + pad) * wp + pad;
            std::copy(src, src + w, dst);
        }
    }
}

}  // namespace detail

// Standard cross-correlation. x:[N,Ci,H,W], w:[Co,Ci,KH,KW], bias:[Co]
// (optional). Output extents use floor division, matching the stride-2
// downsampling convention on even inputs.
template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    std::int64_t stride, std::int64_t padding) {
    if (x->shape.size() != 4 || w->shape.size() != 4) {
        throw ShapeError("conv2d expects x:[N,Ci,H,W] and w:[Co,Ci,KH,KW]");
    }
    if (stride <= 0 || padding < 0) {
        throw ShapeError("conv2d: stride must be positive and padding non-negative");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c_in = x->shape[1];
    const std::int64_t h = x->shape[2];
    const std::int64_t wdt = x->shape[3];
    const std::int64_t c_out = w->shape[0];
    const std::int64_t kh = w->shape[2];
    const std::int64_t kw = w->shape[3];
    if (w->shape[1] != c_in) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(w->shape[1]) +
                         " input channels, got " + std::to_string(c_in));
    }
    if (b) {
        require_shape(b, Shape{c_out}, "conv2d bias");
    }
    const std::int64_t h_out = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t w_out = (wdt + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || wdt + 2 * padding < kw || h_out <= 0 || w_out <= 0) {
        throw ShapeError("conv2d: empty output extent for input " + shape_str(x->shape) +
                         " kernel " + shape_str(w->shape));
    }

    const std::int64_t hp = h + 2 * padding;
    const std::int64_t wp = wdt + 2 * padding;
    std::vector<T> xp(static_cast<std::size_t>(c_in * hp * wp));
    std::vector<T> d(static_cast<std::size_t>(n * c_out * h_out * w_out), T(0));

    for (std::int64_t ni = 0; ni < n; ++ni) {
        detail::fill_padded(x->data, ni, c_in, h, wdt, padding, xp);
        for (std::int64_t co = 0; co < c_out; ++co) {
            T* out_plane = d.data() + (ni * c_out + co) * h_out * w_out;
            if (b) {
                std::fill(out_plane, out_plane + h_out * w_out, b->data[static_cast<std::size_t>(co)]);
            }
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                const T* xplane = xp.data() + ci * hp * wp;
                const T* wbase = w->data.data() + (co * c_in + ci) * kh * kw;
                for (std::int64_t r = 0; r < kh; ++r) {
                    for (std::int64_t q = 0; q < kw; ++q) {
                        const T wv = wbase[r * kw + q];
                        for (std::int64_t ho = 0; ho < h_out; ++ho) {
                            const T* xrow = xplane + (ho * stride + r) * wp + q;
                            T* orow = out_plane + ho * w_out;
                            if (stride == 1) {
                                for (std::int64_t wo = 0; wo < w_out; ++wo) {
                                    orow[wo] += wv * xrow[wo];
                                }
                            } else {
                                for (std::int64_t wo = 0; wo < w_out; ++wo) {
                                    orow[wo] += wv * xrow[wo * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    count_macs(static_cast<std::uint64_t>(n) * c_out * c_in * kh * kw * h_out * w_out);
    ensure_all_finite(d, "conv2d");

    const bool rg =
        grad_enabled() && (x->requires_grad || w->requires_grad || (b && b->requires_grad));
    auto out = make_node<T>(Shape{n, c_out, h_out, w_out}, std::move(d), rg);
    if (rg) {
        out->parents = {x, w};
        if (b) {
            out->parents.push_back(b);
        }
        out->backprop = [x, w, b, stride, padding, n, c_in, h, wdt, c_out, kh, kw, h_out,
                         w_out, hp, wp](TensorT<T>& self) {
            std::vector<T> xp(static_cast<std::size_t>(c_in * hp * wp));
            std::vector<T> dxp;
            if (x->requires_grad) {
                dxp.assign(static_cast<std::size_t>(c_in * hp * wp), T(0));
            }
            for (std::int64_t ni = 0; ni < n; ++ni) {
                if (w->requires_grad) {
                    detail::fill_padded(x->data, ni, c_in, h, wdt, padding, xp);
                }
                if (x->requires_grad) {
                    std::fill(dxp.begin(), dxp.end(), T(0));
                }
                for (std::int64_t co = 0; co < c_out; ++co) {
                    const T* gplane = self.grad.data() + (ni * c_out + co) * h_out * w_out;
                    if (b && b->requires_grad) {
                        T acc = T(0);
                        for (std::int64_t i = 0; i < h_out * w_out; ++i) {
                            acc += gplane[i];
                        }
                        b->grad[static_cast<std::size_t>(co)] += acc;
                    }
                    for (std::int64_t ci = 0; ci < c_in; ++ci) {
                        const T* xplane = xp.data() + ci * hp * wp;
                        T* dxplane = x->requires_grad ? dxp.data() + ci * hp * wp : nullptr;
                        const std::int64_t wbase_idx = (co * c_in + ci) * kh * kw;
                        for (std::int64_t r = 0; r < kh; ++r) {
                            for (std::int64_t q = 0; q < kw; ++q) {
                                const T wv = w->data[static_cast<std::size_t>(wbase_idx + r * kw + q)];
                                T wacc = T(0);
                                for (std::int64_t ho = 0; ho < h_out; ++ho) {
                                    const T* grow = gplane + ho * w_out;
                                    const std::int64_t row_off = (ho * stride + r) * wp + q;
                                    if (w->requires_grad) {
                                        const T* xrow = xplane + row_off;
                                        for (std::int64_t wo = 0; wo < w_out; ++wo) {
                                            wacc += xrow[wo * stride] * grow[wo];
                                        }
                                    }
                                    if (dxplane) {
                                        T* dxrow = dxplane + row_off;
                                        for (std::int64_t wo = 0; wo < w_out; ++wo) {
                                            dxrow[wo * stride] += wv * grow[wo];
                                        }
                                    }
                                }
                                if (w->requires_grad) {
                                    w->grad[static_cast<std::size_t>(wbase_idx + r * kw + q)] += wacc;
                                }
                            }
                        }
                    }
                }
                if (x->requires_grad) {
                    T* xg_base = x->grad.data() + ni * c_in * h * wdt;
                    for (std::int64_t ci = 0; ci < c_in; ++ci) {
                        for (std::int64_t row = 0; row < h; ++row) {
                            const T* src = dxp.data() + (ci * hp + row + padding) * wp + padding;
                            T* dst = xg_base + (ci * h + row) * wdt;
                            for (std::int64_t col = 0; col < wdt; ++col) {
                                dst[col] += src[col];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Secondary conv2d route: im2col followed by a plain matrix product.
// Forward-only; used to cross-check the direct path.
template <class T>
std::vector<T> conv2d_im2col_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                                     std::int64_t stride, std::int64_t padding) {
    const std::int64_t n = x.shape[0];
    const std::int64_t c_in = x.shape[1];
    const std::int64_t h = x.shape[2];
    const std::int64_t wdt = x.shape[3];
    const std::int64_t c_out = w.shape[0];
    const std::int64_t kh = w.shape[2];
    const std::int64_t kw = w.shape[3];
    const std::int64_t h_out = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t w_out = (wdt + 2 * padding - kw) / stride + 1;
    const std::int64_t hp = h + 2 * padding;
    const std::int64_t wp = wdt + 2 * padding;
    const std::int64_t patch = c_in * kh * kw;

    std::vector<T> xp(static_cast<std::size_t>(c_in * hp * wp));
    std::vector<T> cols(static_cast<std::size_t>(patch * h_out * w_out));
    std::vector<T> out(static_cast<std::size_t>(n * c_out * h_out * w_out));

    for (std::int64_t ni = 0; ni < n; ++ni) {
        detail::fill_padded(x.data, ni, c_in, h, wdt, padding, xp);
        std::int64_t prow = 0;
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
            for (std::int64_t r = 0; r < kh; ++r) {
                for (std::int64_t q = 0; q < kw; ++q, ++prow) {
                    T* crow = cols.data() + prow * h_out * w_out;
                    for (std::int64_t ho = 0; ho < h_out; ++ho) {
                        const T* xrow = xp.data() + ci * hp * wp + (ho * stride + r) * wp + q;
                        for (std::int64_t wo = 0; wo < w_out; ++wo) {
                            crow[ho * w_out + wo] = xrow[wo * stride];
                        }
                    }
                }
            }
        }
        for (std::int64_t co = 0; co < c_out; ++co) {
            T* orow = out.data() + (ni * c_out + co) * h_out * w_out;
            const T bias = b ? b->data[static_cast<std::size_t>(co)] : T(0);
            std::fill(orow, orow + h_out * w_out, bias);
            const T* wrow = w.data.data() + co * patch;
            for (std::int64_t p = 0; p < patch; ++p) {
                const T wv = wrow[p];
                const T* crow = cols.data() + p * h_out * w_out;
                for (std::int64_t i = 0; i < h_out * w_out; ++i) {
                    orow[i] += wv * crow[i];
                }
            }
        }
    }
    ensure_all_finite(out, "conv2d_im2col");
    return out;
}

// Per-channel batch normalization on [N,C,H,W]. Training mode normalizes
// with batch statistics and folds them into the running buffers; eval mode
// normalizes with the running buffers. Running buffers never carry grad.
template <class T>
TensorPtr<T> batch_norm2d(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, const TensorPtr<T>& running_mean,
                          const TensorPtr<T>& running_var, T eps, T momentum, bool training) {
    if (x->shape.size() != 4) {
        throw ShapeError("batch_norm2d expects x:[N,C,H,W]");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t h = x->shape[2];
    const std::int64_t w = x->shape[3];
    require_shape(gamma, Shape{c}, "batch_norm gamma");
    require_shape(beta, Shape{c}, "batch_norm beta");
    require_shape(running_mean, Shape{c}, "batch_norm running_mean");
    require_shape(running_var, Shape{c}, "batch_norm running_var");
    if (!(eps > T(0))) {
        throw ShapeError("batch_norm eps must be positive");
    }
    if (!(momentum > T(0) && momentum < T(1))) {
        throw ShapeError("batch_norm momentum must lie in (0,1)");
    }
    const std::int64_t m = n * h * w;
    if (training && m < 2) {
        throw ShapeError("batch_norm training mode requires at least 2 values per channel");
    }

    std::vector<T> mu(static_cast<std::size_t>(c), T(0));
    std::vector<T> var(static_cast<std::size_t>(c), T(0));
    const std::int64_t plane = h * w;

    if (training) {
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::int64_t ni = 0; ni < n; ++ni) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* xrow = x->data.data() + (ni * c + ci) * plane;
                T acc = T(0);
                for (std::int64_t i = 0; i < plane; ++i) {
                    acc += xrow[i];
                }
                mu[static_cast<std::size_t>(ci)] += acc;
            }
        }
        for (auto& v : mu) {
            v *= inv_m;
        }
        for (std::int64_t ni = 0; ni < n; ++ni) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* xrow = x->data.data() + (ni * c + ci) * plane;
                const T m_c = mu[static_cast<std::size_t>(ci)];
                T acc = T(0);
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T dv = xrow[i] - m_c;
                    acc += dv * dv;
                }
                var[static_cast<std::size_t>(ci)] += acc;
            }
        }
        for (auto& v : var) {
            v *= inv_m;
        }
        for (std::int64_t ci = 0; ci < c; ++ci) {
            auto i = static_cast<std::size_t>(ci);
            if (var[i] < T(0)) {
                std::fprintf(stderr, "batch_norm: clamping negative variance %g to 0\n",
                             static_cast<double>(var[i]));
                var[i] = T(0);
            }
            running_mean->data[i] = (T(1) - momentum) * running_mean->data[i] + momentum * mu[i];
            running_var->data[i] = (T(1) - momentum) * running_var->data[i] + momentum * var[i];
        }
    } else {
        for (std::int64_t ci = 0; ci < c; ++ci) {
            auto i = static_cast<std::size_t>(ci);
            mu[i] = running_mean->data[i];
            var[i] = running_var->data[i];
            if (var[i] < T(0)) {
                std::fprintf(stderr, "batch_norm: clamping negative running variance %g to 0\n",
                             static_cast<double>(var[i]));
                var[i] = T(0);
            }
        }
    }

    std::vector<T> invstd(static_cast<std::size_t>(c));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        invstd[static_cast<std::size_t>(ci)] =
            T(1) / std::sqrt(var[static_cast<std::size_t>(ci)] + eps);
    }

    const bool rg = grad_enabled() &&
                    (x->requires_grad || gamma->requires_grad || beta->requires_grad);
    std::vector<T> d(x->data.size());
    std::vector<T> xhat;
    if (rg) {
        xhat.resize(x->data.size());
    }
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const auto i = static_cast<std::size_t>(ci);
            const T* xrow = x->data.data() + (ni * c + ci) * plane;
            T* drow = d.data() + (ni * c + ci) * plane;
            const T m_c = mu[i];
            const T is = invstd[i];
            const T g = gamma->data[i];
            const T be = beta->data[i];
            if (rg) {
                T* hrow = xhat.data() + (ni * c + ci) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const T xn = (xrow[p] - m_c) * is;
                    hrow[p] = xn;
                    drow[p] = xn * g + be;
                }
            } else {
                for (std::int64_t p = 0; p < plane; ++p) {
                    drow[p] = (xrow[p] - m_c) * is * g + be;
                }
            }
        }
    }
    ensure_all_finite(d, "batch_norm2d");

    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x, gamma, beta};
        out->backprop = [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), n, c,
                         plane, m, training](TensorT<T>& self) {
            std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0));
            std::vector<T> sum_dy_xhat(static_cast<std::size_t>(c), T(0));
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    const T* grow = self.grad.data() + (ni * c + ci) * plane;
                    const T* hrow = xhat.data() + (ni * c + ci) * plane;
                    T s1 = T(0);
                    T s2 = T(0);
                    for (std::int64_t p = 0; p < plane; ++p) {
                        s1 += grow[p];
                        s2 += grow[p] * hrow[p];
                    }
                    sum_dy[static_cast<std::size_t>(ci)] += s1;
                    sum_dy_xhat[static_cast<std::size_t>(ci)] += s2;
                }
            }
            if (beta->requires_grad) {
                beta->accum_grad(sum_dy);
            }
            if (gamma->requires_grad) {
                gamma->accum_grad(sum_dy_xhat);
            }
            if (x->requires_grad) {
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::int64_t ni = 0; ni < n; ++ni) {
                    for (std::int64_t ci = 0; ci < c; ++ci) {
                        const auto i = static_cast<std::size_t>(ci);
                        const T* grow = self.grad.data() + (ni * c + ci) * plane;
                        const T* hrow = xhat.data() + (ni * c + ci) * plane;
                        T* xgrow = x->grad.data() + (ni * c + ci) * plane;
                        const T g_is = gamma->data[i] * invstd[i];
                        if (training) {
                            const T sdy = sum_dy[i];
                            const T sdyh = sum_dy_xhat[i];
                            for (std::int64_t p = 0; p < plane; ++p) {
                                xgrow[p] += g_is * (grow[p] - inv_m * sdy - inv_m * hrow[p] * sdyh);
                            }
                        } else {
                            for (std::int64_t p = 0; p < plane; ++p) {
                                xgrow[p] += g_is * grow[p];
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> concat_channels(const std::vector<TensorPtr<T>>& xs) {
    if (xs.empty()) {
        throw ShapeError("concat_channels of empty list");
    }
    const std::int64_t n = xs[0]->shape.size() == 4 ? xs[0]->shape[0] : -1;
    if (n < 0) {
        throw ShapeError("concat_channels expects 4-d tensors");
    }
    const std::int64_t h = xs[0]->shape[2];
    const std::int64_t w = xs[0]->shape[3];
    std::int64_t c_total = 0;
    bool rg = false;
    for (const auto& x : xs) {
        if (x->shape.size() != 4 || x->shape[0] != n || x->shape[2] != h || x->shape[3] != w) {
            throw ShapeError("concat_channels: incompatible shape " + shape_str(x->shape));
        }
        c_total += x->shape[1];
        rg = rg || x->requires_grad;
    }
    rg = rg && grad_enabled();
    const std::int64_t plane = h * w;
    std::vector<T> d(static_cast<std::size_t>(n * c_total * plane));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        std::int64_t c_off = 0;
        for (const auto& x : xs) {
            const std::int64_t ci = x->shape[1];
            const T* src = x->data.data() + ni * ci * plane;
            T* dst = d.data() + (ni * c_total + c_off) * plane;
            std::copy(src, src + ci * plane, dst);
            c_off += ci;
        }
    }
    auto out = make_node<T>(Shape{n, c_total, h, w}, std::move(d), rg);
    if (rg) {
        out->parents = xs;
        out->backprop = [xs, n, c_total, plane](TensorT<T>& self) {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                std::int64_t c_off = 0;
                for (const auto& x : xs) {
                    const std::int64_t ci = x->shape[1];
                    if (x->requires_grad) {
                        const T* src = self.grad.data() + (ni * c_total + c_off) * plane;
                        T* dst = x->grad.data() + ni * ci * plane;
                        for (std::int64_t i = 0; i < ci * plane; ++i) {
                            dst[i] += src[i];
                        }
                    }
                    c_off += ci;
                }
            }
        };
    }
    return out;
}

template <class T>
std::vector<TensorPtr<T>> split_channels(const TensorPtr<T>& x,
                                         const std::vector<std::int64_t>& sizes) {
    if (x->shape.size() != 4) {
        throw ShapeError("split_channels expects a 4-d tensor");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t plane = x->shape[2] * x->shape[3];
    std::int64_t total = 0;
    for (const auto s : sizes) {
        total += s;
    }
    if (total != c) {
        throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + ", expected " +
                         std::to_string(c));
    }
    std::vector<TensorPtr<T>> outs;
    std::int64_t c_off = 0;
    const bool rg = grad_enabled() && x->requires_grad;
    for (const auto ci : sizes) {
        std::vector<T> d(static_cast<std::size_t>(n * ci * plane));
        for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* src = x->data.data() + (ni * c + c_off) * plane;
            std::copy(src, src + ci * plane, d.data() + ni * ci * plane);
        }
        auto out = make_node<T>(Shape{n, ci, x->shape[2], x->shape[3]}, std::move(d), rg);
        if (rg) {
            const std::int64_t off = c_off;
            out->parents = {x};
            out->backprop = [x, n, c, ci, off, plane](TensorT<T>& self) {
                for (std::int64_t ni = 0; ni < n; ++ni) {
                    const T* src = self.grad.data() + ni * ci * plane;
                    T* dst = x->grad.data() + (ni * c + off) * plane;
                    for (std::int64_t i = 0; i < ci * plane; ++i) {
                        dst[i] += src[i];
                    }
                }
            };
        }
        outs.push_back(std::move(out));
        c_off += ci;
    }
    return outs;
}

// [N,C,H,W] -> [N,C] spatial mean.
template <class T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& x) {
    if (x->shape.size() != 4) {
        throw ShapeError("global_avg_pool expects a 4-d tensor");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t plane = x->shape[2] * x->shape[3];
    const T inv = T(1) / static_cast<T>(plane);
    std::vector<T> d(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n * c; ++i) {
        const T* row = x->data.data() + i * plane;
        T acc = T(0);
        for (std::int64_t p = 0; p < plane; ++p) {
            acc += row[p];
        }
        d[static_cast<std::size_t>(i)] = acc * inv;
    }
    ensure_all_finite(d, "global_avg_pool");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{n, c}, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, n, c, plane, inv](TensorT<T>& self) {
            for (std::int64_t i = 0; i < n * c; ++i) {
                const T g = self.grad[static_cast<std::size_t>(i)] * inv;
                T* row = x->grad.data() + i * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    row[p] += g;
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> nearest_upsample2x(const TensorPtr<T>& x) {
    if (x->shape.size() != 4) {
        throw ShapeError("nearest_upsample2x expects a 4-d tensor");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t h = x->shape[2];
    const std::int64_t w = x->shape[3];
    std::vector<T> d(static_cast<std::size_t>(n * c * 4 * h * w));
    for (std::int64_t i = 0; i < n * c; ++i) {
        const T* src = x->data.data() + i * h * w;
        T* dst = d.data() + i * 4 * h * w;
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t q = 0; q < w; ++q) {
                const T v = src[r * w + q];
                const std::int64_t base = (2 * r) * (2 * w) + 2 * q;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{n, c, 2 * h, 2 * w}, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, n, c, h, w](TensorT<T>& self) {
            for (std::int64_t i = 0; i < n * c; ++i) {
                const T* g = self.grad.data() + i * 4 * h * w;
                T* dst = x->grad.data() + i * h * w;
                for (std::int64_t r = 0; r < h; ++r) {
                    for (std::int64_t q = 0; q < w; ++q) {
                        const std::int64_t base = (2 * r) * (2 * w) + 2 * q;
                        dst[r * w + q] += g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
                    }
                }
            }
        };
    }
    return out;
}

// F'[n,c,h,w] = F[n,c,h,w] * s[n,c]; the per-sample channel rescaling every
// attention block ends with.
template <class T>
TensorPtr<T> scale_channels(const TensorPtr<T>& x, const TensorPtr<T>& s) {
    if (x->shape.size() != 4 || s->shape.size() != 2 || s->shape[0] != x->shape[0] ||
        s->shape[1] != x->shape[1]) {
        throw ShapeError("scale_channels expects x:[N,C,H,W] and s:[N,C]");
    }
    const std::int64_t nc = x->shape[0] * x->shape[1];
    const std::int64_t plane = x->shape[2] * x->shape[3];
    std::vector<T> d(x->data.size());
    for (std::int64_t i = 0; i < nc; ++i) {
        const T sv = s->data[static_cast<std::size_t>(i)];
        const T* src = x->data.data() + i * plane;
        T* dst = d.data() + i * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            dst[p] = src[p] * sv;
        }
    }
    ensure_all_finite(d, "scale_channels");
    const bool rg = grad_enabled() && (x->requires_grad || s->requires_grad);
    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x, s};
        out->backprop = [x, s, nc, plane](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nc; ++i) {
                const T* g = self.grad.data() + i * plane;
                if (x->requires_grad) {
                    const T sv = s->data[static_cast<std::size_t>(i)];
                    T* xg = x->grad.data() + i * plane;
                    for (std::int64_t p = 0; p < plane; ++p) {
                        xg[p] += g[p] * sv;
                    }
                }
                if (s->requires_grad) {
                    const T* xv = x->data.data() + i * plane;
                    T acc = T(0);
                    for (std::int64_t p = 0; p < plane; ++p) {
                        acc += g[p] * xv[p];
                    }
                    s->grad[static_cast<std::size_t>(i)] += acc;
                }
            }
        };
    }
    return out;
}

// v[n,c] = sum_{h,w} wmap[n,0,h,w] * x[n,c,h,w]: the flattened map-times-
// feature product that pools a feature map through an activation map.
template <class T>
TensorPtr<T> spatial_weighted_sum(const TensorPtr<T>& x, const TensorPtr<T>& wmap) {
    if (x->shape.size() != 4 || wmap->shape.size() != 4 || wmap->shape[0] != x->shape[0] ||
        wmap->shape[1] != 1 || wmap->shape[2] != x->shape[2] || wmap->shape[3] != x->shape[3]) {
        throw ShapeError("spatial_weighted_sum expects x:[N,C,H,W] and map:[N,1,H,W]");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t plane = x->shape[2] * x->shape[3];
    std::vector<T> d(static_cast<std::size_t>(n * c));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        const T* mrow = wmap->data.data() + ni * plane;
        for (std::int64_t ci = 0; ci < c; ++ci) {
            const T* xrow = x->data.data() + (ni * c + ci) * plane;
            T acc = T(0);
            for (std::int64_t p = 0; p < plane; ++p) {
                acc += mrow[p] * xrow[p];
            }
            d[static_cast<std::size_t>(ni * c + ci)] = acc;
        }
    }
    count_macs(static_cast<std::uint64_t>(n) * c * plane);
    ensure_all_finite(d, "spatial_weighted_sum");
    const bool rg = grad_enabled() && (x->requires_grad || wmap->requires_grad);
    auto out = make_node<T>(Shape{n, c}, std::move(d), rg);
    if (rg) {
        out->parents = {x, wmap};
        out->backprop = [x, wmap, n, c, plane](TensorT<T>& self) {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* mrow = wmap->data.data() + ni * plane;
                T* mgrow = wmap->requires_grad ? wmap->grad.data() + ni * plane : nullptr;
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    const T g = self.grad[static_cast<std::size_t>(ni * c + ci)];
                    const T* xrow = x->data.data() + (ni * c + ci) * plane;
                    if (x->requires_grad) {
                        T* xgrow = x->grad.data() + (ni * c + ci) * plane;
                        for (std::int64_t p = 0; p < plane; ++p) {
                            xgrow[p] += g * mrow[p];
                        }
                    }
                    if (mgrow) {
                        for (std::int64_t p = 0; p < plane; ++p) {
                            mgrow[p] += g * xrow[p];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// 1-d convolution over the channel axis of v:[N,C] with an odd-sized kernel
// and zero padding; no bias. Used by the efficient-channel-attention gate.
template <class T>
TensorPtr<T> conv1d_channels(const TensorPtr<T>& v, const TensorPtr<T>& kernel) {
    if (v->shape.size() != 2 || kernel->shape.size() != 1) {
        throw ShapeError("conv1d_channels expects v:[N,C] and kernel:[k]");
    }
    const std::int64_t n = v->shape[0];
    const std::int64_t c = v->shape[1];
    const std::int64_t k = kernel->shape[0];
    if (k % 2 == 0 || k < 1) {
        throw ShapeError("conv1d_channels kernel size must be odd");
    }
    const std::int64_t pad = (k - 1) / 2;
    std::vector<T> padded(static_cast<std::size_t>(c + 2 * pad), T(0));
    std::vector<T> d(static_cast<std::size_t>(n * c), T(0));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        std::fill(padded.begin(), padded.end(), T(0));
        std::copy(v->data.begin() + ni * c, v->data.begin() + (ni + 1) * c, padded.begin() + pad);
        for (std::int64_t ci = 0; ci < c; ++ci) {
            T acc = T(0);
            for (std::int64_t j = 0; j < k; ++j) {
                acc += kernel->data[static_cast<std::size_t>(j)] *
                       padded[static_cast<std::size_t>(ci + j)];
            }
            d[static_cast<std::size_t>(ni * c + ci)] = acc;
        }
    }
    count_macs(static_cast<std::uint64_t>(n) * c * k);
    ensure_all_finite(d, "conv1d_channels");
    const bool rg = grad_enabled() && (v->requires_grad || kernel->requires_grad);
    auto out = make_node<T>(Shape{n, c}, std::move(d), rg);
    if (rg) {
        out->parents = {v, kernel};
        out->backprop = [v, kernel, n, c, k, pad](TensorT<T>& self) {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    const T g = self.grad[static_cast<std::size_t>(ni * c + ci)];
                    for (std::int64_t j = 0; j < k; ++j) {
                        const std::int64_t src = ci + j - pad;
                        if (src < 0 || src >= c) {
                            continue;
                        }
                        if (v->requires_grad) {
                            v->grad[static_cast<std::size_t>(ni * c + src)] +=
                                g * kernel->data[static_cast<std::size_t>(j)];
                        }
                        if (kernel->requires_grad) {
                            kernel->grad[static_cast<std::size_t>(j)] +=
                                g * v->data[static_cast<std::size_t>(ni * c + src)];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// [N,C,H,W] -> [N,C,H] mean over W.
template <class T>
TensorPtr<T> pool_width(const TensorPtr<T>& x) {
    if (x->shape.size() != 4) {
        throw ShapeError("pool_width expects a 4-d tensor");
    }
    const std::int64_t nch = x->shape[0] * x->shape[1] * x->shape[2];
    const std::int64_t w = x->shape[3];
    const T inv = T(1) / static_cast<T>(w);
    std::vector<T> d(static_cast<std::size_t>(nch));
    for (std::int64_t i = 0; i < nch; ++i) {
        const T* row = x->data.data() + i * w;
        T acc = T(0);
        for (std::int64_t q = 0; q < w; ++q) {
            acc += row[q];
        }
        d[static_cast<std::size_t>(i)] = acc * inv;
    }
    ensure_all_finite(d, "pool_width");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{x->shape[0], x->shape[1], x->shape[2]}, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, nch, w, inv](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nch; ++i) {
                const T g = self.grad[static_cast<std::size_t>(i)] * inv;
                T* row = x->grad.data() + i * w;
                for (std::int64_t q = 0; q < w; ++q) {
                    row[q] += g;
                }
            }
        };
    }
    return out;
}

// [N,C,H,W] -> [N,C,W] mean over H.
template <class T>
TensorPtr<T> pool_height(const TensorPtr<T>& x) {
    if (x->shape.size() != 4) {
        throw ShapeError("pool_height expects a 4-d tensor");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t h = x->shape[2];
    const std::int64_t w = x->shape[3];
    const T inv = T(1) / static_cast<T>(h);
    std::vector<T> d(static_cast<std::size_t>(n * c * w), T(0));
    for (std::int64_t i = 0; i < n * c; ++i) {
        const T* plane = x->data.data() + i * h * w;
        T* drow = d.data() + i * w;
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t q = 0; q < w; ++q) {
                drow[q] += plane[r * w + q];
            }
        }
        for (std::int64_t q = 0; q < w; ++q) {
            drow[q] *= inv;
        }
    }
    ensure_all_finite(d, "pool_height");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{n, c, w}, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, n, c, h, w, inv](TensorT<T>& self) {
            for (std::int64_t i = 0; i < n * c; ++i) {
                const T* grow = self.grad.data() + i * w;
                T* plane = x->grad.data() + i * h * w;
                for (std::int64_t r = 0; r < h; ++r) {
                    for (std::int64_t q = 0; q < w; ++q) {
                        plane[r * w + q] += grow[q] * inv;
                    }
                }
            }
        };
    }
    return out;
}

// Concatenate two [N,C,L] sequences along L.
template <class T>
TensorPtr<T> concat_length(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[1] != b->shape[1]) {
        throw ShapeError("concat_length expects [N,C,L] tensors with matching N,C");
    }
    const std::int64_t nc = a->shape[0] * a->shape[1];
    const std::int64_t la = a->shape[2];
    const std::int64_t lb = b->shape[2];
    std::vector<T> d(static_cast<std::size_t>(nc * (la + lb)));
    for (std::int64_t i = 0; i < nc; ++i) {
        std::copy(a->data.begin() + i * la, a->data.begin() + (i + 1) * la,
                  d.begin() + i * (la + lb));
        std::copy(b->data.begin() + i * lb, b->data.begin() + (i + 1) * lb,
                  d.begin() + i * (la + lb) + la);
    }
    const bool rg = grad_enabled() && (a->requires_grad || b->requires_grad);
    auto out = make_node<T>(Shape{a->shape[0], a->shape[1], la + lb}, std::move(d), rg);
    if (rg) {
        out->parents = {a, b};
        out->backprop = [a, b, nc, la, lb](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nc; ++i) {
                const T* g = self.grad.data() + i * (la + lb);
                if (a->requires_grad) {
                    T* ga = a->grad.data() + i * la;
                    for (std::int64_t p = 0; p < la; ++p) {
                        ga[p] += g[p];
                    }
                }
                if (b->requires_grad) {
                    T* gb = b->grad.data() + i * lb;
                    for (std::int64_t p = 0; p < lb; ++p) {
                        gb[p] += g[la + p];
                    }
                }
            }
        };
    }
    return out;
}

template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> split_length(const TensorPtr<T>& x, std::int64_t la) {
    if (x->shape.size() != 3 || la <= 0 || la >= x->shape[2]) {
        throw ShapeError("split_length: bad split point");
    }
    const std::int64_t nc = x->shape[0] * x->shape[1];
    const std::int64_t l = x->shape[2];
    const std::int64_t lb = l - la;
    std::vector<T> da(static_cast<std::size_t>(nc * la));
    std::vector<T> db(static_cast<std::size_t>(nc * lb));
    for (std::int64_t i = 0; i < nc; ++i) {
        std::copy(x->data.begin() + i * l, x->data.begin() + i * l + la, da.begin() + i * la);
        std::copy(x->data.begin() + i * l + la, x->data.begin() + (i + 1) * l, db.begin() + i * lb);
    }
    const bool rg = grad_enabled() && x->requires_grad;
    auto outa = make_node<T>(Shape{x->shape[0], x->shape[1], la}, std::move(da), rg);
    auto outb = make_node<T>(Shape{x->shape[0], x->shape[1], lb}, std::move(db), rg);
    if (rg) {
        outa->parents = {x};
        outa->backprop = [x, nc, l, la](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nc; ++i) {
                const T* g = self.grad.data() + i * la;
                T* dst = x->grad.data() + i * l;
                for (std::int64_t p = 0; p < la; ++p) {
                    dst[p] += g[p];
                }
            }
        };
        outb->parents = {x};
        outb->backprop = [x, nc, l, la, lb](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nc; ++i) {
                const T* g = self.grad.data() + i * lb;
                T* dst = x->grad.data() + i * l + la;
                for (std::int64_t p = 0; p < lb; ++p) {
                    dst[p] += g[p];
                }
            }
        };
    }
    return {outa, outb};
}

// Position-wise linear map over an [N,C,L] sequence: out[n,o,l] =
// b[o] + sum_c w[o,c] x[n,c,l]. Equivalent to a 1x1 convolution.
template <class T>
TensorPtr<T> pointwise_conv1d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    if (x->shape.size() != 3 || w->shape.size() != 2 || w->shape[1] != x->shape[1]) {
        throw ShapeError("pointwise_conv1d expects x:[N,C,L] and w:[O,C]");
    }
    const std::int64_t n = x->shape[0];
    const std::int64_t c = x->shape[1];
    const std::int64_t l = x->shape[2];
    const std::int64_t o = w->shape[0];
    if (b) {
        require_shape(b, Shape{o}, "pointwise_conv1d bias");
    }
    std::vector<T> d(static_cast<std::size_t>(n * o * l));
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t oi = 0; oi < o; ++oi) {
            T* drow = d.data() + (ni * o + oi) * l;
            const T bias = b ? b->data[static_cast<std::size_t>(oi)] : T(0);
            std::fill(drow, drow + l, bias);
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T wv = w->data[static_cast<std::size_t>(oi * c + ci)];
                const T* xrow = x->data.data() + (ni * c + ci) * l;
                for (std::int64_t p = 0; p < l; ++p) {
                    drow[p] += wv * xrow[p];
                }
            }
        }
    }
    count_macs(static_cast<std::uint64_t>(n) * o * c * l);
    ensure_all_finite(d, "pointwise_conv1d");
    const bool rg =
        grad_enabled() && (x->requires_grad || w->requires_grad || (b && b->requires_grad));
    auto out = make_node<T>(Shape{n, o, l}, std::move(d), rg);
    if (rg) {
        out->parents = {x, w};
        if (b) {
            out->parents.push_back(b);
        }
        out->backprop = [x, w, b, n, c, l, o](TensorT<T>& self) {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t oi = 0; oi < o; ++oi) {
                    const T* grow = self.grad.data() + (ni * o + oi) * l;
                    if (b && b->requires_grad) {
                        T acc = T(0);
                        for (std::int64_t p = 0; p < l; ++p) {
                            acc += grow[p];
                        }
                        b->grad[static_cast<std::size_t>(oi)] += acc;
                    }
                    for (std::int64_t ci = 0; ci < c; ++ci) {
                        if (x->requires_grad) {
                            const T wv = w->data[static_cast<std::size_t>(oi * c + ci)];
                            T* xgrow = x->grad.data() + (ni * c + ci) * l;
                            for (std::int64_t p = 0; p < l; ++p) {
                                xgrow[p] += wv * grow[p];
                            }
                        }
                        if (w->requires_grad) {
                            const T* xrow = x->data.data() + (ni * c + ci) * l;
                            T acc = T(0);
                            for (std::int64_t p = 0; p < l; ++p) {
                                acc += xrow[p] * grow[p];
                            }
                            w->grad[static_cast<std::size_t>(oi * c + ci)] += acc;
                        }
                    }
                }
            }
        };
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * s[n,c,h]
template <class T>
TensorPtr<T> scale_height(const TensorPtr<T>& x, const TensorPtr<T>& s) {
    if (x->shape.size() != 4 || s->shape.size() != 3 || s->shape[0] != x->shape[0] ||
        s->shape[1] != x->shape[1] || s->shape[2] != x->shape[2]) {
        throw ShapeError("scale_height expects x:[N,C,H,W] and s:[N,C,H]");
    }
    const std::int64_t nch = x->shape[0] * x->shape[1] * x->shape[2];
    const std::int64_t w = x->shape[3];
    std::vector<T> d(x->data.size());
    for (std::int64_t i = 0; i < nch; ++i) {
        const T sv = s->data[static_cast<std::size_t>(i)];
        const T* src = x->data.data() + i * w;
        T* dst = d.data() + i * w;
        for (std::int64_t q = 0; q < w; ++q) {
            dst[q] = src[q] * sv;
        }
    }
    ensure_all_finite(d, "scale_height");
    const bool rg = grad_enabled() && (x->requires_grad || s->requires_grad);
    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x, s};
        out->backprop = [x, s, nch, w](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nch; ++i) {
                const T* g = self.grad.data() + i * w;
                if (x->requires_grad) {
                    const T sv = s->data[static_cast<std::size_t>(i)];
                    T* xg = x->grad.data() + i * w;
                    for (std::int64_t q = 0; q < w; ++q) {
                        xg[q] += g[q] * sv;
                    }
                }
                if (s->requires_grad) {
                    const T* xv = x->data.data() + i * w;
                    T acc = T(0);
                    for (std::int64_t q = 0; q < w; ++q) {
                        acc += g[q] * xv[q];
                    }
                    s->grad[static_cast<std::size_t>(i)] += acc;
                }
            }
        };
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * s[n,c,w]
template <class T>
TensorPtr<T> scale_width(const TensorPtr<T>& x, const TensorPtr<T>& s) {
    if (x->shape.size() != 4 || s->shape.size() != 3 || s->shape[0] != x->shape[0] ||
        s->shape[1] != x->shape[1] || s->shape[2] != x->shape[3]) {
        throw ShapeError("scale_width expects x:[N,C,H,W] and s:[N,C,W]");
    }
    const std::int64_t nc = x->shape[0] * x->shape[1];
    const std::int64_t h = x->shape[2];
    const std::int64_t w = x->shape[3];
    std::vector<T> d(x->data.size());
    for (std::int64_t i = 0; i < nc; ++i) {
        const T* srow = s->data.data() + i * w;
        for (std::int64_t r = 0; r < h; ++r) {
            const T* src = x->data.data() + (i * h + r) * w;
            T* dst = d.data() + (i * h + r) * w;
            for (std::int64_t q = 0; q < w; ++q) {
                dst[q] = src[q] * srow[q];
            }
        }
    }
    ensure_all_finite(d, "scale_width");
    const bool rg = grad_enabled() && (x->requires_grad || s->requires_grad);
    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x, s};
        out->backprop = [x, s, nc, h, w](TensorT<T>& self) {
            for (std::int64_t i = 0; i < nc; ++i) {
                const T* srow = s->data.data() + i * w;
                T* sgrow = s->requires_grad ? s->grad.data() + i * w : nullptr;
                for (std::int64_t r = 0; r < h; ++r) {
                    const T* g = self.grad.data() + (i * h + r) * w;
                    const T* xv = x->data.data() + (i * h + r) * w;
                    if (x->requires_grad) {
                        T* xg = x->grad.data() + (i * h + r) * w;
                        for (std::int64_t q = 0; q < w; ++q) {
                            xg[q] += g[q] * srow[q];
                        }
                    }
                    if (sgrow) {
                        for (std::int64_t q = 0; q < w; ++q) {
                            sgrow[q] += g[q] * xv[q];
                        }
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace fbc
