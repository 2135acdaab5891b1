#pragma once

// Toy detector: a small stride-2 conv stem feeding three pyramid levels,
// the contrast-attention neck, and the anchor-free head on the stride-8
// output.

#include "fbc/blocks.hpp"
#include "fbc/head.hpp"
#include "fbc/toyscene.hpp"

namespace fbc {

struct DetectorConfig {
    std::array<std::int64_t, 2> stem_channels{8, 12};
    std::array<std::int64_t, 3> feature_channels{16, 24, 32};  // F3, F4, F5
    std::array<std::int64_t, 3> neck_out_channels{16, 24, 32};
    std::int64_t n_bottlenecks = 1;
    double hidden_ratio = 0.5;
    std::int64_t pos1_kernel = 5;
    std::int64_t pos3_kernel = 3;
    AttentionKind attention = AttentionKind::Fbca;
    bool include_background = true;
    bool residual = false;
    std::int64_t ratio = 4;
    std::int64_t eca_kernel = 3;
    bool bias = true;
    double negative_slope = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.03;
    InitMode init = InitMode::He;

    static constexpr std::int64_t kStride = 8;

    NeckConfig neck_config() const {
        NeckConfig n;
        n.in_channels = feature_channels;
        n.out_channels = neck_out_channels;
        n.fuse.n_bottlenecks = n_bottlenecks;
        n.fuse.hidden_ratio = hidden_ratio;
        n.fuse.pos1_kernel = pos1_kernel;
        n.fuse.pos3_kernel = pos3_kernel;
        n.fuse.attention = attention;
        n.fuse.include_background = include_background;
        n.fuse.residual = residual;
        n.fuse.ratio = ratio;
        n.fuse.eca_kernel = eca_kernel;
        n.fuse.bias = bias;
        n.fuse.negative_slope = negative_slope;
        n.fuse.bn_eps = bn_eps;
        n.fuse.bn_momentum = bn_momentum;
        n.fuse.init = init;
        return n;
    }
};

template <class T>
class ToyDetector {
public:
    ToyDetector(const DetectorConfig& cfg, RngStream& rng)
        : cfg_(cfg),
          neck_(cfg.neck_config(), rng),
          head_(HeadConfig{cfg.neck_out_channels[0], DetectorConfig::kStride, cfg.bias,
                           cfg.negative_slope, cfg.bn_eps, cfg.bn_momentum, cfg.init},
                rng) {
        const std::int64_t chain[6] = {3,
                                       cfg.stem_channels[0],
                                       cfg.stem_channels[1],
                                       cfg.feature_channels[0],
                                       cfg.feature_channels[1],
                                       cfg.feature_channels[2]};
        for (int i = 0; i < 5; ++i) {
            stem_.emplace_back(ConvBnActConfig{chain[i], chain[i + 1], 3, 2, cfg.negative_slope,
                                               cfg.bn_eps, cfg.bn_momentum, cfg.bias, cfg.init},
                               rng);
        }
    }

    // images: [N,3,H,W] with H,W multiples of 32 (three stride-2 stages to
    // F3 plus two more pyramid levels).
    HeadOutput<T> forward(const TensorPtr<T>& images, bool training,
                          AttnProbe<T>* probe = nullptr) const {
        auto x = images;
        for (int i = 0; i < 3; ++i) {
            x = stem_[static_cast<std::size_t>(i)].forward(x, training);
        }
        auto f3 = x;
        auto f4 = stem_[3].forward(f3, training);
        auto f5 = stem_[4].forward(f4, training);
        auto outs = neck_.forward(f3, f4, f5, training, probe);
        return head_.forward(outs[0], training);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (std::size_t i = 0; i < stem_.size(); ++i) {
            stem_[i].collect(prefix + ".stem" + std::to_string(i), out);
        }
        neck_.collect(prefix + ".neck", out);
        head_.collect(prefix + ".head", out);
    }

    ParamList<T> params() const {
        ParamList<T> out;
        collect("detector", out);
        return out;
    }

    const DetectorConfig& config() const { return cfg_; }
    Neck<T>& neck() { return neck_; }

private:
    DetectorConfig cfg_;
    std::vector<ConvBnAct<T>> stem_;
    Neck<T> neck_;
    DetectHead<T> head_;
};

// Stacks scenes [first, first+count) into an [N,3,H,W] input tensor.
template <class T>
TensorPtr<T> stack_scenes(const std::vector<ToyScene>& scenes, std::size_t first,
                          std::size_t count) {
    const auto& ref = scenes.at(first);
    const std::int64_t per = 3 * ref.width * ref.height;
    std::vector<T> data(static_cast<std::size_t>(count) * static_cast<std::size_t>(per));
    for (std::size_t i = 0; i < count; ++i) {
        const auto& s = scenes.at(first + i);
        if (s.width != ref.width || s.height != ref.height) {
            throw ShapeError("stack_scenes: mixed scene extents");
        }
        for (std::int64_t p = 0; p < per; ++p) {
            data[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(p)] =
                static_cast<T>(s.image[static_cast<std::size_t>(p)]);
        }
    }
    return make_tensor<T>(Shape{static_cast<std::int64_t>(count), 3, ref.height, ref.width},
                          std::move(data));
}

}  // namespace fbc
