#pragma once

// Anchor-free single-scale detection head: per-cell objectness logit plus
// center-offset / log-size box regression at a fixed stride.

#include "fbc/boxes.hpp"
#include "fbc/layers.hpp"

namespace fbc {

struct HeadConfig {
    std::int64_t c_in = 16;
    std::int64_t stride = 8;
    bool bias = true;
    double negative_slope = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.03;
    InitMode init = InitMode::He;
};

template <class T>
struct HeadOutput {
    TensorPtr<T> obj;  // [N,1,h,w] logits
    TensorPtr<T> box;  // [N,4,h,w] (tx, ty, log w, log h)
};

template <class T>
struct HeadTargets {
    TensorPtr<T> obj;   // [N,1,h,w] 0/1
    TensorPtr<T> box;   // [N,4,h,w]
    TensorPtr<T> mask;  // [N,4,h,w] 1 on positive cells
};

template <class T>
class DetectHead {
public:
    DetectHead(const HeadConfig& cfg, RngStream& rng)
        : cfg_(cfg),
          stem_(ConvBnActConfig{cfg.c_in, cfg.c_in, 3, 1, cfg.negative_slope, cfg.bn_eps,
                                cfg.bn_momentum, cfg.bias, cfg.init},
                rng) {
        auto init_kernel = [&](std::int64_t c_out) {
            const Shape shape{c_out, cfg.c_in, 1, 1};
            if (cfg.init == InitMode::He) {
                return randn<T>(shape, rng, std::sqrt(2.0 / static_cast<double>(cfg.c_in)), true);
            }
            return zeros<T>(shape, true);
        };
        obj_kernel_ = init_kernel(1);
        obj_bias_ = zeros<T>(Shape{1}, true);
        box_kernel_ = init_kernel(4);
        box_bias_ = zeros<T>(Shape{4}, true);
    }

    HeadOutput<T> forward(const TensorPtr<T>& x, bool training) const {
        auto f = stem_.forward(x, training);
        HeadOutput<T> out;
        out.obj = conv2d(f, obj_kernel_, obj_bias_, 1, 0);
        out.box = conv2d(f, box_kernel_, box_bias_, 1, 0);
        return out;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        stem_.collect(prefix + ".stem", out);
        out.push_back({prefix + ".obj_kernel", obj_kernel_, false});
        out.push_back({prefix + ".obj_bias", obj_bias_, false});
        out.push_back({prefix + ".box_kernel", box_kernel_, false});
        out.push_back({prefix + ".box_bias", box_bias_, false});
    }

    const HeadConfig& config() const { return cfg_; }

private:
    HeadConfig cfg_;
    ConvBnAct<T> stem_;
    TensorPtr<T> obj_kernel_, obj_bias_;
    TensorPtr<T> box_kernel_, box_bias_;
};

// A cell is positive iff a ground-truth center falls inside it; the first
// ground truth (by index) claims a contested cell. Box targets are the
// in-cell center offset and log size in stride units.
template <class T>
HeadTargets<T> build_head_targets(const std::vector<std::vector<Box>>& gts, std::int64_t grid_h,
                                  std::int64_t grid_w, std::int64_t stride) {
    const auto n = static_cast<std::int64_t>(gts.size());
    const std::int64_t plane = grid_h * grid_w;
    std::vector<T> obj(static_cast<std::size_t>(n * plane), T(0));
    std::vector<T> box(static_cast<std::size_t>(n * 4 * plane), T(0));
    std::vector<T> mask(static_cast<std::size_t>(n * 4 * plane), T(0));

    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (const auto& gt : gts[static_cast<std::size_t>(ni)]) {
            const double cx = gt.x + gt.w / 2.0;
            const double cy = gt.y + gt.h / 2.0;
            const auto cell_x = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(cx / static_cast<double>(stride)), 0, grid_w - 1);
            const auto cell_y = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(cy / static_cast<double>(stride)), 0, grid_h - 1);
            const std::int64_t cell = cell_y * grid_w + cell_x;
            if (obj[static_cast<std::size_t>(ni * plane + cell)] != T(0)) {
                continue;  // cell already claimed
            }
            obj[static_cast<std::size_t>(ni * plane + cell)] = T(1);
            const double tx = cx / stride - static_cast<double>(cell_x);
            const double ty = cy / stride - static_cast<double>(cell_y);
            const double tw = std::log(gt.w / static_cast<double>(stride));
            const double th = std::log(gt.h / static_cast<double>(stride));
            const T vals[4] = {static_cast<T>(tx), static_cast<T>(ty), static_cast<T>(tw),
                               static_cast<T>(th)};
            for (std::int64_t k = 0; k < 4; ++k) {
                box[static_cast<std::size_t>((ni * 4 + k) * plane + cell)] = vals[k];
                mask[static_cast<std::size_t>((ni * 4 + k) * plane + cell)] = T(1);
            }
        }
    }

    HeadTargets<T> targets;
    targets.obj = make_tensor<T>(Shape{n, 1, grid_h, grid_w}, std::move(obj));
    targets.box = make_tensor<T>(Shape{n, 4, grid_h, grid_w}, std::move(box));
    targets.mask = make_tensor<T>(Shape{n, 4, grid_h, grid_w}, std::move(mask));
    return targets;
}

// BCE over all cells plus L1 over positive-cell box regressors.
template <class T>
TensorPtr<T> head_loss(const HeadOutput<T>& out, const HeadTargets<T>& targets, T box_weight) {
    auto obj_loss = bce_with_logits_mean(out.obj, targets.obj);
    auto box_loss = masked_l1_mean(out.box, targets.box, targets.mask);
    return add(obj_loss, mul_scalar(box_loss, box_weight));
}

// Raw decode of one sample (no graph): every cell becomes a scored box.
template <class T>
std::vector<ScoredBox> decode_detections(const TensorT<T>& obj, const TensorT<T>& box,
                                         std::int64_t sample, std::int64_t stride) {
    const std::int64_t grid_h = obj.shape[2];
    const std::int64_t grid_w = obj.shape[3];
    const std::int64_t plane = grid_h * grid_w;
    std::vector<ScoredBox> dets;
    dets.reserve(static_cast<std::size_t>(plane));
    for (std::int64_t cy = 0; cy < grid_h; ++cy) {
        for (std::int64_t cx = 0; cx < grid_w; ++cx) {
            const std::int64_t cell = cy * grid_w + cx;
            const double logit =
                static_cast<double>(obj.data[static_cast<std::size_t>(sample * plane + cell)]);
            const auto reg = [&](std::int64_t k) {
                return static_cast<double>(
                    box.data[static_cast<std::size_t>((sample * 4 + k) * plane + cell)]);
            };
            const double score = sigmoid_scalar(logit);
            const double bcx = (static_cast<double>(cx) + reg(0)) * stride;
            const double bcy = (static_cast<double>(cy) + reg(1)) * stride;
            const double bw = std::exp(std::clamp(reg(2), -8.0, 8.0)) * stride;
            const double bh = std::exp(std::clamp(reg(3), -8.0, 8.0)) * stride;
            dets.push_back({Box{bcx - bw / 2.0, bcy - bh / 2.0, bw, bh}, score});
        }
    }
    return dets;
}

}  // namespace fbc
