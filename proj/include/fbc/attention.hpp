#pragma once

// Fore-background contrast attention and the comparison channel-attention
// blocks, all behind one contract: [N,C,H,W] in, same shape out.

#include <optional>
#include <variant>

#include "fbc/layers.hpp"

namespace fbc {

enum class AttentionKind { None, Se, Eca, Coord, Fbca };

inline const char* attention_kind_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::None: return "none";
        case AttentionKind::Se: return "se";
        case AttentionKind::Eca: return "eca";
        case AttentionKind::Coord: return "coord";
        case AttentionKind::Fbca: return "fbca";
    }
    return "?";
}

inline AttentionKind parse_attention_kind(const std::string& s) {
    if (s == "none") return AttentionKind::None;
    if (s == "se") return AttentionKind::Se;
    if (s == "eca") return AttentionKind::Eca;
    if (s == "coord") return AttentionKind::Coord;
    if (s == "fbca") return AttentionKind::Fbca;
    throw ShapeError("unknown attention kind '" + s + "'");
}

// Largest divisor of `channels` not exceeding `requested`; lets a single
// configured compression ratio serve blocks of different widths while the
// divisibility invariant stays enforced at construction.
inline std::int64_t fit_ratio(std::int64_t channels, std::int64_t requested) {
    for (std::int64_t r = std::min(channels, requested); r > 1; --r) {
        if (channels % r == 0) {
            return r;
        }
    }
    return 1;
}

struct AttentionConfig {
    AttentionKind kind = AttentionKind::Fbca;
    std::int64_t channels = 0;
    std::int64_t fbca_kernel = 5;
    std::int64_t ratio = 16;
    std::int64_t eca_kernel = 3;
    bool include_background = true;
    bool residual = false;
    bool bias = true;
    double negative_slope = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.03;
    InitMode init = InitMode::He;
};

template <class T>
struct FbcaIntermediates {
    TensorPtr<T> map_fore;  // [N,1,H,W], sigma(CBLR(F))
    TensorPtr<T> map_back;  // [N,1,H,W], 1 - map_fore
    TensorPtr<T> v_fore;    // [N,C]
    TensorPtr<T> v_back;    // [N,C]
    TensorPtr<T> c_fore;    // [N,C]
    TensorPtr<T> c_back;    // [N,C]
    TensorPtr<T> d_w;       // [N,C]
};

template <class T>
class FbcaState {
public:
    FbcaState(const AttentionConfig& cfg, RngStream& rng)
        : cfg_(cfg),
          cblr_(ConvBnActConfig{cfg.channels, 1, cfg.fbca_kernel, 1, cfg.negative_slope,
                                cfg.bn_eps, cfg.bn_momentum, cfg.bias, cfg.init},
                rng),
          fore_gate_(MlpGateConfig{cfg.channels, cfg.ratio, cfg.negative_slope, cfg.bias, cfg.init},
                     rng),
          back_gate_(MlpGateConfig{cfg.channels, cfg.ratio, cfg.negative_slope, cfg.bias, cfg.init},
                     rng) {}

    // Embedding stage: activation map, its complement and the two pooled
    // channel vectors.
    FbcaIntermediates<T> embed(const TensorPtr<T>& x, bool training) const {
        if (x->shape.size() != 4 || x->shape[1] != cfg_.channels) {
            throw ShapeError("fbca: input " + shape_str(x->shape) + " does not match " +
                             std::to_string(cfg_.channels) + " channels");
        }
        auto pre = cblr_.forward(x, training);
        return embed_from_map(x, sigmoid(pre));
    }

    // Embedding given an externally supplied foreground map; also the test
    // entry point for forcing a map.
    FbcaIntermediates<T> embed_from_map(const TensorPtr<T>& x, const TensorPtr<T>& map_fore) const {
        FbcaIntermediates<T> inter;
        inter.map_fore = map_fore;
        inter.map_back = rsub_scalar(T(1), map_fore);
        inter.v_fore = spatial_weighted_sum(x, inter.map_fore);
        inter.v_back = spatial_weighted_sum(x, inter.map_back);
        return inter;
    }

    // Gating stage: per-channel gates and their difference.
    void contrast(FbcaIntermediates<T>& inter) const {
        inter.c_fore = fore_gate_.forward(inter.v_fore);
        inter.c_back = back_gate_.forward(inter.v_back);
        inter.d_w = cfg_.include_background ? sub(inter.c_fore, inter.c_back) : inter.c_fore;
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training,
                         FbcaIntermediates<T>* probe = nullptr) const {
        auto inter = embed(x, training);
        contrast(inter);
        if (override_dw_) {
            inter.d_w = full<T>(Shape{x->shape[0], x->shape[1]}, *override_dw_, false);
        }
        if (probe) {
            *probe = inter;
        }
        return scale_channels(x, inter.d_w);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        cblr_.collect(prefix + ".cblr", out);
        fore_gate_.collect(prefix + ".fore_gate", out);
        back_gate_.collect(prefix + ".back_gate", out);
    }

    std::int64_t param_count() const {
        return cblr_.param_count() + fore_gate_.param_count() + back_gate_.param_count();
    }

    // Test hook: replaces d_w by a constant (no gradient).
    void set_override_dw(std::optional<T> v) { override_dw_ = v; }

    const AttentionConfig& config() const { return cfg_; }
    const ConvBnAct<T>& cblr() const { return cblr_; }
    const MlpGate<T>& fore_gate() const { return fore_gate_; }
    const MlpGate<T>& back_gate() const { return back_gate_; }
    ConvBnAct<T>& cblr() { return cblr_; }
    MlpGate<T>& fore_gate() { return fore_gate_; }
    MlpGate<T>& back_gate() { return back_gate_; }

private:
    AttentionConfig cfg_;
    ConvBnAct<T> cblr_;
    MlpGate<T> fore_gate_;
    MlpGate<T> back_gate_;
    std::optional<T> override_dw_;
};

template <class T>
class SeState {
public:
    SeState(const AttentionConfig& cfg, RngStream& rng)
        : cfg_(cfg),
          gate_(MlpGateConfig{cfg.channels, cfg.ratio, cfg.negative_slope, cfg.bias, cfg.init},
                rng) {}

    TensorPtr<T> forward(const TensorPtr<T>& x, bool /*training*/) const {
        auto gate = gate_.forward(global_avg_pool(x));
        return scale_channels(x, gate);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        gate_.collect(prefix + ".gate", out);
    }

    std::int64_t param_count() const { return gate_.param_count(); }

    const MlpGate<T>& gate() const { return gate_; }

private:
    AttentionConfig cfg_;
    MlpGate<T> gate_;
};

template <class T>
class EcaState {
public:
    EcaState(const AttentionConfig& cfg, RngStream& rng) : cfg_(cfg) {
        if (cfg.eca_kernel < 1 || cfg.eca_kernel % 2 == 0) {
            throw ShapeError("eca: kernel size must be odd");
        }
        if (cfg.init == InitMode::He) {
            kernel_ = randn<T>(Shape{cfg.eca_kernel}, rng,
                               std::sqrt(2.0 / static_cast<double>(cfg.eca_kernel)), true);
        } else {
            kernel_ = zeros<T>(Shape{cfg.eca_kernel}, true);
        }
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool /*training*/) const {
        auto gate = sigmoid(conv1d_channels(global_avg_pool(x), kernel_));
        return scale_channels(x, gate);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".kernel", kernel_, false});
    }

    std::int64_t param_count() const { return cfg_.eca_kernel; }

    const TensorPtr<T>& kernel() const { return kernel_; }

private:
    AttentionConfig cfg_;
    TensorPtr<T> kernel_;
};

// Coordinate attention: per-axis pooled sequences through a shared 1x1 stem
// and two per-axis 1x1 heads with sigmoid gates.
template <class T>
class CoordState {
public:
    CoordState(const AttentionConfig& cfg, RngStream& rng) : cfg_(cfg) {
        const std::int64_t c = cfg.channels;
        if (c < 1 || cfg.ratio < 1 || c % cfg.ratio != 0) {
            throw ShapeError("coord: compression ratio must divide channel count");
        }
        const std::int64_t hidden = c / cfg.ratio;
        auto init_w = [&](std::int64_t rows, std::int64_t cols) {
            if (cfg.init == InitMode::He) {
                return randn<T>(Shape{rows, cols}, rng,
                                std::sqrt(2.0 / static_cast<double>(cols)), true);
            }
            return zeros<T>(Shape{rows, cols}, true);
        };
        stem_w_ = init_w(hidden, c);
        head_h_w_ = init_w(c, hidden);
        head_w_w_ = init_w(c, hidden);
        if (cfg.bias) {
            stem_b_ = zeros<T>(Shape{hidden}, true);
            head_h_b_ = zeros<T>(Shape{c}, true);
            head_w_b_ = zeros<T>(Shape{c}, true);
        }
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool /*training*/) const {
        const std::int64_t h = x->shape[2];
        auto seq = concat_length(pool_width(x), pool_height(x));  // [N,C,H+W]
        auto y = leaky_relu(pointwise_conv1d(seq, stem_w_, stem_b_),
                            static_cast<T>(cfg_.negative_slope));
        auto [yh, yw] = split_length(y, h);
        auto gate_h = sigmoid(pointwise_conv1d(yh, head_h_w_, head_h_b_));  // [N,C,H]
        auto gate_w = sigmoid(pointwise_conv1d(yw, head_w_w_, head_w_b_));  // [N,C,W]
        return scale_width(scale_height(x, gate_h), gate_w);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".stem_w", stem_w_, false});
        if (stem_b_) {
            out.push_back({prefix + ".stem_b", stem_b_, false});
        }
        out.push_back({prefix + ".head_h_w", head_h_w_, false});
        if (head_h_b_) {
            out.push_back({prefix + ".head_h_b", head_h_b_, false});
        }
        out.push_back({prefix + ".head_w_w", head_w_w_, false});
        if (head_w_b_) {
            out.push_back({prefix + ".head_w_b", head_w_b_, false});
        }
    }

    std::int64_t param_count() const {
        const std::int64_t c = cfg_.channels;
        const std::int64_t hidden = c / cfg_.ratio;
        std::int64_t n = hidden * c + 2 * c * hidden;
        if (cfg_.bias) {
            n += hidden + 2 * c;
        }
        return n;
    }

private:
    AttentionConfig cfg_;
    TensorPtr<T> stem_w_, stem_b_;
    TensorPtr<T> head_h_w_, head_h_b_;
    TensorPtr<T> head_w_w_, head_w_b_;
};

// Tagged union over the attention variants, sharing one forward contract.
template <class T>
class AttentionBlock {
public:
    AttentionBlock(const AttentionConfig& cfg, RngStream& rng) : cfg_(cfg) {
        switch (cfg.kind) {
            case AttentionKind::None:
                break;
            case AttentionKind::Se:
                state_.template emplace<SeState<T>>(cfg, rng);
                break;
            case AttentionKind::Eca:
                state_.template emplace<EcaState<T>>(cfg, rng);
                break;
            case AttentionKind::Coord:
                state_.template emplace<CoordState<T>>(cfg, rng);
                break;
            case AttentionKind::Fbca:
                state_.template emplace<FbcaState<T>>(cfg, rng);
                break;
        }
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training,
                         FbcaIntermediates<T>* probe = nullptr) const {
        TensorPtr<T> y;
        switch (cfg_.kind) {
            case AttentionKind::None:
                return x;
            case AttentionKind::Se:
                y = std::get<SeState<T>>(state_).forward(x, training);
                break;
            case AttentionKind::Eca:
                y = std::get<EcaState<T>>(state_).forward(x, training);
                break;
            case AttentionKind::Coord:
                y = std::get<CoordState<T>>(state_).forward(x, training);
                break;
            case AttentionKind::Fbca:
                y = std::get<FbcaState<T>>(state_).forward(x, training, probe);
                break;
        }
        return cfg_.residual ? add(y, x) : y;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        std::visit(
            [&](const auto& s) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(s)>, std::monostate>) {
                    s.collect(prefix, out);
                }
            },
            state_);
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        std::visit(
            [&](const auto& s) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(s)>, std::monostate>) {
                    n = s.param_count();
                }
            },
            state_);
        return n;
    }

    AttentionKind kind() const { return cfg_.kind; }
    const AttentionConfig& config() const { return cfg_; }

    FbcaState<T>* fbca() { return std::get_if<FbcaState<T>>(&state_); }
    const FbcaState<T>* fbca() const { return std::get_if<FbcaState<T>>(&state_); }

private:
    AttentionConfig cfg_;
    std::variant<std::monostate, SeState<T>, EcaState<T>, CoordState<T>, FbcaState<T>> state_;
};

}  // namespace fbc
