#pragma once

// The cross-stage-partial fusion block with attention at positions 1 and 3,
// and the three-level top-down/bottom-up neck built from it.

#include <array>

#include "fbc/attention.hpp"

namespace fbc {

// Per-forward collector of attention intermediates, used for logging and
// map dumps.
template <class T>
struct AttnProbe {
    struct Site {
        std::string id;
        FbcaIntermediates<T> inter;
    };
    std::vector<Site> sites;
};

struct FbcspConfig {
    std::int64_t c_in = 0;
    std::int64_t c_out = 0;
    std::int64_t n_bottlenecks = 1;
    double hidden_ratio = 0.5;
    std::int64_t pos1_kernel = 5;
    std::int64_t pos3_kernel = 3;
    AttentionKind attention = AttentionKind::Fbca;
    bool include_background = true;
    bool residual = false;
    std::int64_t ratio = 16;
    std::int64_t eca_kernel = 3;
    bool bias = true;
    double negative_slope = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.03;
    InitMode init = InitMode::He;

    std::int64_t hidden_channels() const {
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(c_out * hidden_ratio)));
    }
};

// Two branches from the same input compressed to the hidden width; the
// transform branch runs attention (position 1) and the bottleneck stack;
// concat, merge back to c_out, then attention again (position 3).
template <class T>
class Fbcsp {
public:
    Fbcsp(const FbcspConfig& cfg, RngStream& rng, std::string name = "fbcsp")
        : cfg_(cfg),
          name_(std::move(name)),
          branch_a_(conv_cfg(cfg.c_in, cfg.hidden_channels(), 1, cfg), rng),
          branch_b_(conv_cfg(cfg.c_in, cfg.hidden_channels(), 1, cfg), rng),
          attn1_(attn_cfg(cfg.hidden_channels(), cfg.pos1_kernel, cfg), rng),
          merge_(conv_cfg(2 * cfg.hidden_channels(), cfg.c_out, 1, cfg), rng),
          attn3_(attn_cfg(cfg.c_out, cfg.pos3_kernel, cfg), rng) {
        if (cfg.hidden_ratio <= 0.0 || cfg.hidden_ratio > 1.0) {
            throw ShapeError("fbcsp: hidden_ratio must lie in (0,1]");
        }
        if (cfg.n_bottlenecks < 0) {
            throw ShapeError("fbcsp: n_bottlenecks must be >= 0");
        }
        const std::int64_t hidden = cfg.hidden_channels();
        for (std::int64_t i = 0; i < cfg.n_bottlenecks; ++i) {
            bottlenecks_.emplace_back(ConvBnAct<T>(conv_cfg(hidden, hidden, 3, cfg), rng),
                                      ConvBnAct<T>(conv_cfg(hidden, hidden, 3, cfg), rng));
        }
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, bool training,
                         AttnProbe<T>* probe = nullptr) const {
        if (x->shape.size() != 4 || x->shape[1] != cfg_.c_in) {
            throw ShapeError("fbcsp '" + name_ + "': input " + shape_str(x->shape) +
                             " does not match c_in=" + std::to_string(cfg_.c_in));
        }
        auto a = attn_forward(attn1_, branch_a_.forward(x, training), training, ".attn1", probe);
        for (const auto& [cb1, cb2] : bottlenecks_) {
            a = add(a, cb2.forward(cb1.forward(a, training), training));
        }
        auto b = branch_b_.forward(x, training);
        auto merged = merge_.forward(concat_channels<T>({a, b}), training);
        return attn_forward(attn3_, merged, training, ".attn3", probe);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        branch_a_.collect(prefix + ".branch_a", out);
        branch_b_.collect(prefix + ".branch_b", out);
        attn1_.collect(prefix + ".attn1", out);
        for (std::size_t i = 0; i < bottlenecks_.size(); ++i) {
            bottlenecks_[i].first.collect(prefix + ".bneck" + std::to_string(i) + ".cb1", out);
            bottlenecks_[i].second.collect(prefix + ".bneck" + std::to_string(i) + ".cb2", out);
        }
        merge_.collect(prefix + ".merge", out);
        attn3_.collect(prefix + ".attn3", out);
    }

    const FbcspConfig& config() const { return cfg_; }
    const std::string& name() const { return name_; }
    AttentionBlock<T>& attn1() { return attn1_; }
    AttentionBlock<T>& attn3() { return attn3_; }
    const AttentionBlock<T>& attn1() const { return attn1_; }
    const AttentionBlock<T>& attn3() const { return attn3_; }
    ConvBnAct<T>& branch_a() { return branch_a_; }
    ConvBnAct<T>& branch_b() { return branch_b_; }
    ConvBnAct<T>& merge() { return merge_; }

private:
    static ConvBnActConfig conv_cfg(std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                                    const FbcspConfig& cfg) {
        return ConvBnActConfig{c_in,     c_out,          k,        1, cfg.negative_slope,
                               cfg.bn_eps, cfg.bn_momentum, cfg.bias, cfg.init};
    }

    static AttentionConfig attn_cfg(std::int64_t channels, std::int64_t kernel,
                                    const FbcspConfig& cfg) {
        AttentionConfig a;
        a.kind = cfg.attention;
        a.channels = channels;
        a.fbca_kernel = kernel;
        a.ratio = fit_ratio(channels, cfg.ratio);
        a.eca_kernel = cfg.eca_kernel;
        a.include_background = cfg.include_background;
        a.residual = cfg.residual;
        a.bias = cfg.bias;
        a.negative_slope = cfg.negative_slope;
        a.bn_eps = cfg.bn_eps;
        a.bn_momentum = cfg.bn_momentum;
        a.init = cfg.init;
        return a;
    }

    TensorPtr<T> attn_forward(const AttentionBlock<T>& attn, const TensorPtr<T>& x, bool training,
                              const char* site, AttnProbe<T>* probe) const {
        if (probe && attn.kind() == AttentionKind::Fbca) {
            FbcaIntermediates<T> inter;
            auto y = attn.forward(x, training, &inter);
            probe->sites.push_back({name_ + site, std::move(inter)});
            return y;
        }
        return attn.forward(x, training);
    }

    FbcspConfig cfg_;
    std::string name_;
    ConvBnAct<T> branch_a_;
    ConvBnAct<T> branch_b_;
    AttentionBlock<T> attn1_;
    ConvBnAct<T> merge_;
    AttentionBlock<T> attn3_;
    std::vector<std::pair<ConvBnAct<T>, ConvBnAct<T>>> bottlenecks_;
};

struct NeckConfig {
    std::array<std::int64_t, 3> in_channels{16, 24, 32};   // F3, F4, F5
    std::array<std::int64_t, 3> out_channels{16, 24, 32};  // F3', F4', F5'
    FbcspConfig fuse;  // c_in/c_out are filled per fusion site
};

// Three-level fusion: top-down pass producing P4 and P3, then bottom-up
// producing F4' and F5'. All four fusions are Fbcsp blocks; level changes
// use nearest x2 upsampling and stride-2 ConvBnAct downsampling.
template <class T>
class Neck {
public:
    Neck(const NeckConfig& cfg, RngStream& rng)
        : cfg_(cfg),
          fuse_p4_(site_cfg(cfg, cfg.in_channels[2] + cfg.in_channels[1], mid4(cfg)), rng,
                   "fuse_p4"),
          fuse_p3_(site_cfg(cfg, mid4(cfg) + cfg.in_channels[0], cfg.out_channels[0]), rng,
                   "fuse_p3"),
          down3_(down_cfg(cfg, cfg.out_channels[0]), rng),
          fuse_n4_(site_cfg(cfg, cfg.out_channels[0] + mid4(cfg), cfg.out_channels[1]), rng,
                   "fuse_n4"),
          down4_(down_cfg(cfg, cfg.out_channels[1]), rng),
          fuse_n5_(site_cfg(cfg, cfg.out_channels[1] + cfg.in_channels[2], cfg.out_channels[2]),
                   rng, "fuse_n5") {}

    std::array<TensorPtr<T>, 3> forward(const TensorPtr<T>& f3, const TensorPtr<T>& f4,
                                        const TensorPtr<T>& f5, bool training,
                                        AttnProbe<T>* probe = nullptr) const {
        check_pyramid(f3, f4, f5);
        auto p4 = fuse_p4_.forward(concat_channels<T>({nearest_upsample2x(f5), f4}), training,
                                   probe);
        auto p3 = fuse_p3_.forward(concat_channels<T>({nearest_upsample2x(p4), f3}), training,
                                   probe);
        auto f3p = p3;
        auto f4p = fuse_n4_.forward(
            concat_channels<T>({down3_.forward(f3p, training), p4}), training, probe);
        auto f5p = fuse_n5_.forward(
            concat_channels<T>({down4_.forward(f4p, training), f5}), training, probe);
        return {f3p, f4p, f5p};
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        fuse_p4_.collect(prefix + ".fuse_p4", out);
        fuse_p3_.collect(prefix + ".fuse_p3", out);
        down3_.collect(prefix + ".down3", out);
        fuse_n4_.collect(prefix + ".fuse_n4", out);
        down4_.collect(prefix + ".down4", out);
        fuse_n5_.collect(prefix + ".fuse_n5", out);
    }

    const NeckConfig& config() const { return cfg_; }
    Fbcsp<T>& fuse_p4() { return fuse_p4_; }
    Fbcsp<T>& fuse_p3() { return fuse_p3_; }
    Fbcsp<T>& fuse_n4() { return fuse_n4_; }
    Fbcsp<T>& fuse_n5() { return fuse_n5_; }

private:
    // Width of the intermediate P4 fusion; reused by the bottom-up pass.
    static std::int64_t mid4(const NeckConfig& cfg) { return cfg.out_channels[1]; }

    static FbcspConfig site_cfg(const NeckConfig& cfg, std::int64_t c_in, std::int64_t c_out) {
        FbcspConfig f = cfg.fuse;
        f.c_in = c_in;
        f.c_out = c_out;
        return f;
    }

    static ConvBnActConfig down_cfg(const NeckConfig& cfg, std::int64_t c) {
        return ConvBnActConfig{c,
                               c,
                               3,
                               2,
                               cfg.fuse.negative_slope,
                               cfg.fuse.bn_eps,
                               cfg.fuse.bn_momentum,
                               cfg.fuse.bias,
                               cfg.fuse.init};
    }

    void check_pyramid(const TensorPtr<T>& f3, const TensorPtr<T>& f4,
                       const TensorPtr<T>& f5) const {
        if (f3->shape.size() != 4 || f4->shape.size() != 4 || f5->shape.size() != 4) {
            throw ShapeError("neck: inputs must be 4-d");
        }
        if (f3->shape[2] != 2 * f4->shape[2] || f3->shape[3] != 2 * f4->shape[3] ||
            f4->shape[2] != 2 * f5->shape[2] || f4->shape[3] != 2 * f5->shape[3]) {
            throw ShapeError("neck: spatial extents must form a 4:2:1 pyramid, got " +
                             shape_str(f3->shape) + ", " + shape_str(f4->shape) + ", " +
                             shape_str(f5->shape));
        }
        if (f3->shape[2] % 2 != 0 || f3->shape[3] % 2 != 0 || f4->shape[2] % 2 != 0 ||
            f4->shape[3] % 2 != 0) {
            throw ShapeError("neck: downsampled levels require even spatial extents");
        }
        if (f3->shape[1] != cfg_.in_channels[0] || f4->shape[1] != cfg_.in_channels[1] ||
            f5->shape[1] != cfg_.in_channels[2]) {
            throw ShapeError("neck: channel counts do not match the configuration");
        }
    }

    NeckConfig cfg_;
    Fbcsp<T> fuse_p4_;
    Fbcsp<T> fuse_p3_;
    ConvBnAct<T> down3_;
    Fbcsp<T> fuse_n4_;
    ConvBnAct<T> down4_;
    Fbcsp<T> fuse_n5_;
};

}  // namespace fbc
