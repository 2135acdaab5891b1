#pragma once

// Elementwise ops, activations, reductions and reshape on the autodiff tape.

#include <algorithm>
#include <cmath>
#include <limits>

#include "fbc/tensor.hpp"

namespace fbc {

template <class T>
void require_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* what) {
    if (a->shape != b->shape) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
}

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> d(a->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = a->data[i] + b->data[i];
    }
    ensure_all_finite(d, "add");
    const bool rg = grad_enabled() && (a->requires_grad || b->requires_grad);
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a, b};
        out->backprop = [a, b](TensorT<T>& self) {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    a->grad[i] += self.grad[i];
                }
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    b->grad[i] += self.grad[i];
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> d(a->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = a->data[i] - b->data[i];
    }
    ensure_all_finite(d, "sub");
    const bool rg = grad_enabled() && (a->requires_grad || b->requires_grad);
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a, b};
        out->backprop = [a, b](TensorT<T>& self) {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    a->grad[i] += self.grad[i];
                }
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    b->grad[i] -= self.grad[i];
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> d(a->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = a->data[i] * b->data[i];
    }
    ensure_all_finite(d, "mul");
    const bool rg = grad_enabled() && (a->requires_grad || b->requires_grad);
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a, b};
        out->backprop = [a, b](TensorT<T>& self) {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    a->grad[i] += b->data[i] * self.grad[i];
                }
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    b->grad[i] += a->data[i] * self.grad[i];
                }
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> add_scalar(const TensorPtr<T>& a, T c) {
    std::vector<T> d = a->data;
    for (auto& v : d) {
        v += c;
    }
    ensure_all_finite(d, "add_scalar");
    const bool rg = grad_enabled() && a->requires_grad;
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a};
        out->backprop = [a](TensorT<T>& self) { a->accum_grad(self.grad); };
    }
    return out;
}

template <class T>
TensorPtr<T> mul_scalar(const TensorPtr<T>& a, T c) {
    std::vector<T> d = a->data;
    for (auto& v : d) {
        v *= c;
    }
    ensure_all_finite(d, "mul_scalar");
    const bool rg = grad_enabled() && a->requires_grad;
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a};
        out->backprop = [a, c](TensorT<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                a->grad[i] += c * self.grad[i];
            }
        };
    }
    return out;
}

// c - x. The background map (1 - map) is this op with c = 1, kept as a
// literal subtraction so map_fore + map_back == 1 holds exactly.
template <class T>
TensorPtr<T> rsub_scalar(T c, const TensorPtr<T>& a) {
    std::vector<T> d(a->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = c - a->data[i];
    }
    ensure_all_finite(d, "rsub_scalar");
    const bool rg = grad_enabled() && a->requires_grad;
    auto out = make_node<T>(a->shape, std::move(d), rg);
    if (rg) {
        out->parents = {a};
        out->backprop = [a](TensorT<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                a->grad[i] -= self.grad[i];
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> leaky_relu(const TensorPtr<T>& x, T slope) {
    std::vector<T> d(x->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const T v = x->data[i];
        d[i] = v > T(0) ? v : slope * v;
    }
    if (kink_tracking_flag()) {
        for (const T v : x->data) {
            note_kink_distance(std::abs(static_cast<double>(v)));
        }
    }
    if (sign_hash_flag()) {
        for (const T v : x->data) {
            note_activation_branch(v > T(0) ? 1u : 0u);
        }
    }
    ensure_all_finite(d, "leaky_relu");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, slope](TensorT<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                x->grad[i] += (x->data[i] > T(0) ? T(1) : slope) * self.grad[i];
            }
        };
    }
    return out;
}

// Logistic clamped into the open interval: gate outputs contractually lie
// in (0,1) even where the exact value would round to 0 or 1.
template <class T>
T sigmoid_scalar(T v) {
    T s;
    if (v >= T(0)) {
        const T e = std::exp(-v);
        s = T(1) / (T(1) + e);
    } else {
        const T e = std::exp(v);
        s = e / (T(1) + e);
    }
    if (s >= T(1)) {
        return T(1) - std::numeric_limits<T>::epsilon() / T(2);
    }
    if (s <= T(0)) {
        return std::numeric_limits<T>::min();
    }
    return s;
}

template <class T>
TensorPtr<T> sigmoid(const TensorPtr<T>& x) {
    std::vector<T> d(x->data.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = sigmoid_scalar(x->data[i]);
    }
    ensure_all_finite(d, "sigmoid");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(x->shape, std::move(d), rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x](TensorT<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T s = self.data[i];
                x->grad[i] += s * (T(1) - s) * self.grad[i];
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> sum(const TensorPtr<T>& x) {
    T acc = T(0);
    for (const T v : x->data) {
        acc += v;
    }
    ensure_all_finite(std::vector<T>{acc}, "sum");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{}, std::vector<T>{acc}, rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x](TensorT<T>& self) {
            const T g = self.grad[0];
            for (auto& gv : x->grad) {
                gv += g;
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> mean(const TensorPtr<T>& x) {
    if (x->data.empty()) {
        throw ShapeError("mean of empty tensor");
    }
    T acc = T(0);
    for (const T v : x->data) {
        acc += v;
    }
    const T inv_n = T(1) / static_cast<T>(x->data.size());
    acc *= inv_n;
    ensure_all_finite(std::vector<T>{acc}, "mean");
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(Shape{}, std::vector<T>{acc}, rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x, inv_n](TensorT<T>& self) {
            const T g = self.grad[0] * inv_n;
            for (auto& gv : x->grad) {
                gv += g;
            }
        };
    }
    return out;
}

template <class T>
TensorPtr<T> reshape(const TensorPtr<T>& x, const Shape& new_shape) {
    if (numel(new_shape) != x->size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " +
                         shape_str(new_shape));
    }
    const bool rg = grad_enabled() && x->requires_grad;
    auto out = make_node<T>(new_shape, x->data, rg);
    if (rg) {
        out->parents = {x};
        out->backprop = [x](TensorT<T>& self) { x->accum_grad(self.grad); };
    }
    return out;
}

// [N,C,H,W] -> [N, C*H*W]
template <class T>
TensorPtr<T> flatten(const TensorPtr<T>& x) {
    if (x->shape.empty()) {
        throw ShapeError("flatten of scalar");
    }
    return reshape(x, Shape{x->shape[0], x->size() / x->shape[0]});
}

// Mean of elementwise binary cross-entropy between sigmoid(logits) and
// targets in [0,1], computed in the numerically stable logit form. Targets
// carry no gradient.
template <class T>
TensorPtr<T> bce_with_logits_mean(const TensorPtr<T>& logits, const TensorPtr<T>& targets) {
    require_same_shape(logits, targets, "bce_with_logits_mean");
    if (logits->data.empty()) {
        throw ShapeError("bce_with_logits_mean of empty tensor");
    }
    T acc = T(0);
    for (std::size_t i = 0; i < logits->data.size(); ++i) {
        const T z = logits->data[i];
        const T t = targets->data[i];
        acc += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    const T inv_n = T(1) / static_cast<T>(logits->data.size());
    acc *= inv_n;
    ensure_all_finite(std::vector<T>{acc}, "bce_with_logits_mean");
    const bool rg = grad_enabled() && logits->requires_grad;
    auto out = make_node<T>(Shape{}, std::vector<T>{acc}, rg);
    if (rg) {
        out->parents = {logits};
        out->backprop = [logits, targets, inv_n](TensorT<T>& self) {
            const T g = self.grad[0] * inv_n;
            for (std::size_t i = 0; i < logits->data.size(); ++i) {
                logits->grad[i] +=
                    g * (sigmoid_scalar(logits->data[i]) - targets->data[i]);
            }
        };
    }
    return out;
}

// Sum of mask * |pred - target| divided by the number of masked elements
// (at least 1). Mask and target carry no gradient.
template <class T>
TensorPtr<T> masked_l1_mean(const TensorPtr<T>& pred, const TensorPtr<T>& target,
                            const TensorPtr<T>& mask) {
    require_same_shape(pred, target, "masked_l1_mean");
    require_same_shape(pred, mask, "masked_l1_mean");
    std::int64_t active = 0;
    T acc = T(0);
    for (std::size_t i = 0; i < pred->data.size(); ++i) {
        if (mask->data[i] != T(0)) {
            ++active;
            const T diff = pred->data[i] - target->data[i];
            acc += mask->data[i] * std::abs(diff);
            if (sign_hash_flag()) {
                note_activation_branch(diff > T(0) ? 1u : (diff < T(0) ? 0u : 2u));
            }
            if (kink_tracking_flag()) {
                note_kink_distance(std::abs(static_cast<double>(diff)));
            }
        }
    }
    const T inv_n = T(1) / static_cast<T>(std::max<std::int64_t>(1, active));
    acc *= inv_n;
    ensure_all_finite(std::vector<T>{acc}, "masked_l1_mean");
    const bool rg = grad_enabled() && pred->requires_grad;
    auto out = make_node<T>(Shape{}, std::vector<T>{acc}, rg);
    if (rg) {
        out->parents = {pred};
        out->backprop = [pred, target, mask, inv_n](TensorT<T>& self) {
            const T g = self.grad[0] * inv_n;
            for (std::size_t i = 0; i < pred->data.size(); ++i) {
                if (mask->data[i] == T(0)) {
                    continue;
                }
                const T diff = pred->data[i] - target->data[i];
                const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
                pred->grad[i] += g * mask->data[i] * s;
            }
        };
    }
    return out;
}

}  // namespace fbc
