#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fbc/rng.hpp"

namespace fbc {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), static_cast<std::int64_t>(1),
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << shape[i] << (i + 1 < shape.size() ? "x" : "");
    }
    os << "]";
    return os.str();
}

// Thread-local autograd toggle. Eval passes run inside NoGradGuard so no
// graph is recorded.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Thread-local multiply-accumulate counter for cost benchmarking.
inline std::uint64_t& mac_counter() {
    thread_local std::uint64_t count = 0;
    return count;
}

inline bool& mac_counting_flag() {
    thread_local bool on = false;
    return on;
}

inline void count_macs(std::uint64_t n) {
    if (mac_counting_flag()) {
        mac_counter() += n;
    }
}

struct MacCountScope {
    MacCountScope() : prev_(mac_counting_flag()), prev_count_(mac_counter()) {
        mac_counting_flag() = true;
        mac_counter() = 0;
    }
    ~MacCountScope() {
        mac_counting_flag() = prev_;
        mac_counter() = prev_count_;
    }
    std::uint64_t value() const { return mac_counter(); }

private:
    bool prev_;
    std::uint64_t prev_count_;
};

// Distance of the nearest activation input to its kink. Finite-difference
// gradient checks are only valid at points whose +-h neighborhood is free of
// kinks, so check instances are resampled until this margin is comfortable.
inline double& kink_margin() {
    thread_local double margin = std::numeric_limits<double>::infinity();
    return margin;
}

inline bool& kink_tracking_flag() {
    thread_local bool on = false;
    return on;
}

inline void note_kink_distance(double d) {
    if (kink_tracking_flag() && d < kink_margin()) {
        kink_margin() = d;
    }
}

struct KinkMarginScope {
    KinkMarginScope() : prev_(kink_tracking_flag()), prev_margin_(kink_margin()) {
        kink_tracking_flag() = true;
        kink_margin() = std::numeric_limits<double>::infinity();
    }
    ~KinkMarginScope() {
        kink_tracking_flag() = prev_;
        kink_margin() = prev_margin_;
    }
    double value() const { return kink_margin(); }

private:
    bool prev_;
    double prev_margin_;
};

// Positional hash over the branch side taken at every kinked activation.
// Two forward passes with different hashes straddle at least one kink, in
// which case a central difference between them is meaningless.
inline std::uint64_t& activation_sign_hash() {
    thread_local std::uint64_t hash = 0xcbf29ce484222325ULL;
    return hash;
}

inline bool& sign_hash_flag() {
    thread_local bool on = false;
    return on;
}

inline void note_activation_branch(unsigned branch) {
    auto& h = activation_sign_hash();
    h = (h ^ (0x9e3779b97f4a7c15ULL + branch)) * 0x100000001b3ULL;
}

struct SignHashScope {
    SignHashScope() : prev_(sign_hash_flag()), prev_hash_(activation_sign_hash()) {
        sign_hash_flag() = true;
        activation_sign_hash() = 0xcbf29ce484222325ULL;
    }
    ~SignHashScope() {
        sign_hash_flag() = prev_;
        activation_sign_hash() = prev_hash_;
    }
    std::uint64_t value() const { return activation_sign_hash(); }

private:
    bool prev_;
    std::uint64_t prev_hash_;
};

// Dense N-d tensor node. Ops link nodes into a DAG; backward() walks it in
// reverse topological order. Leaves are tensors without a backprop function.
template <class T>
struct TensorT : std::enable_shared_from_this<TensorT<T>> {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // same length as data iff requires_grad
    bool requires_grad = false;
    bool backward_ran = false;  // set on interior nodes once a backward consumed them

    std::vector<std::shared_ptr<TensorT<T>>> parents;
    std::function<void(TensorT<T>&)> backprop;

    TensorT(Shape s, std::vector<T> d, bool rg)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        if (numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        if (requires_grad) {
            grad.assign(data.size(), T(0));
        }
    }

    TensorT(const TensorT&) = delete;
    TensorT& operator=(const TensorT&) = delete;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool is_leaf() const { return !backprop; }

    std::int64_t dim(std::size_t i) const { return shape.at(i); }

    T item() const {
        if (data.size() != 1) {
            throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape));
        }
        return data[0];
    }

    void zero_grad() {
        if (requires_grad) {
            std::fill(grad.begin(), grad.end(), T(0));
        }
    }

    void accum_grad(const std::vector<T>& g) {
        if (!requires_grad) {
            return;
        }
        if (g.size() != data.size()) {
            throw ShapeError("gradient size mismatch");
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad[i] += g[i];
        }
    }

    // Reverse-mode sweep from a scalar root. Deterministic: the topological
    // order depends only on graph construction order.
    void backward() {
        if (data.size() != 1) {
            throw GraphError("backward() requires a scalar loss, got " + shape_str(shape));
        }
        if (!requires_grad) {
            throw GraphError("backward() on a tensor that does not require grad");
        }

        std::vector<TensorT<T>*> topo;
        std::unordered_set<TensorT<T>*> visited;
        std::vector<std::pair<TensorT<T>*, std::size_t>> stack;
        stack.emplace_back(this, 0);
        visited.insert(this);
        while (!stack.empty()) {
            auto& [node, next_parent] = stack.back();
            if (next_parent < node->parents.size()) {
                TensorT<T>* p = node->parents[next_parent].get();
                ++next_parent;
                if (p->requires_grad && visited.insert(p).second) {
                    stack.emplace_back(p, 0);
                }
            } else {
                topo.push_back(node);
                stack.pop_back();
            }
        }

        for (TensorT<T>* node : topo) {
            if (node->backprop && node->backward_ran) {
                throw GraphError("backward() called twice on the same graph; re-run forward first");
            }
        }

        grad[0] += T(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            TensorT<T>* node = *it;
            if (node->backprop) {
                node->backprop(*node);
                node->backward_ran = true;
            }
        }
    }
};

template <class T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <class T>
void ensure_all_finite(const std::vector<T>& values, const char* what) {
    for (const T v : values) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NonFiniteError(std::string("non-finite value produced by ") + what);
        }
    }
}

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    ensure_all_finite(data, "tensor construction");
    return std::make_shared<TensorT<T>>(std::move(shape), std::move(data), requires_grad);
}

// Internal: node creation without the finite scan (ops scan once themselves).
template <class T>
TensorPtr<T> make_node(Shape shape, std::vector<T> data, bool requires_grad) {
    return std::make_shared<TensorT<T>>(std::move(shape), std::move(data), requires_grad);
}

template <class T>
TensorPtr<T> zeros(const Shape& shape, bool requires_grad = false) {
    return make_node<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), T(0)),
                        requires_grad);
}

template <class T>
TensorPtr<T> full(const Shape& shape, T value, bool requires_grad = false) {
    ensure_all_finite(std::vector<T>{value}, "tensor construction");
    return make_node<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), value),
                        requires_grad);
}

template <class T>
TensorPtr<T> ones(const Shape& shape, bool requires_grad = false) {
    return full<T>(shape, T(1), requires_grad);
}

template <class T>
TensorPtr<T> randn(const Shape& shape, RngStream& rng, double stdev = 1.0,
                   bool requires_grad = false) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)));
    for (auto& v : d) {
        v = static_cast<T>(rng.normal(0.0, stdev));
    }
    return make_node<T>(shape, std::move(d), requires_grad);
}

template <class T>
TensorPtr<T> uniform(const Shape& shape, RngStream& rng, double lo, double hi,
                     bool requires_grad = false) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)));
    for (auto& v : d) {
        v = static_cast<T>(rng.uniform(lo, hi));
    }
    return make_node<T>(shape, std::move(d), requires_grad);
}

template <class T>
void require_shape(const TensorPtr<T>& t, const Shape& expect, const char* what) {
    if (t->shape != expect) {
        throw ShapeError(std::string(what) + ": expected shape " + shape_str(expect) + ", got " +
                         shape_str(t->shape));
    }
}

}  // namespace fbc
