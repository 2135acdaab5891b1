#pragma once

// SGDW training loop for the toy detector, per-epoch metrics, and the
// attention-kind ablation runner.

#include <cmath>
#include <thread>

#include "fbc/detector.hpp"
#include "fbc/mr2.hpp"

namespace fbc {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::int64_t epochs = 500;
    std::int64_t batch_size = 8;
    std::uint64_t seed = 42;
    std::int64_t train_scenes = 200;
    std::int64_t val_scenes = 50;
    double box_loss_weight = 1.0;
    std::string lr_schedule = "constant";  // "constant" or "cosine"
    double nms_iou = 0.5;
    SceneConfig scene;
    DetectorConfig arch;
    Mr2Options mr2_opts;

    void validate() const {
        if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0) {
            throw std::invalid_argument("train: lr, momentum and weight_decay must be >= 0");
        }
        if (epochs < 1 || batch_size < 1 || train_scenes < 1 || val_scenes < 1) {
            throw std::invalid_argument("train: epochs, batch size and scene counts must be >= 1");
        }
        if (lr_schedule != "constant" && lr_schedule != "cosine") {
            throw std::invalid_argument("train: unknown lr schedule '" + lr_schedule + "'");
        }
    }
};

// Stream salts for deriving independent per-purpose RNG streams from one
// run seed.
namespace seed_salt {
constexpr std::uint64_t kTrainScenes = 0x11;
constexpr std::uint64_t kValScenes = 0x22;
constexpr std::uint64_t kModelInit = 0x33;
constexpr std::uint64_t kShuffle = 0x44;
}  // namespace seed_salt

struct EpochRow {
    std::int64_t epoch = 0;
    double loss = 0.0;
    double mr2 = 1.0;
    double mean_abs_dw = 0.0;
    double mean_cf = 0.0;
    double mean_cb = 0.0;
};

struct TrainResult {
    std::vector<EpochRow> history;
    double final_mr2 = 1.0;
    std::uint64_t dataset_hash = 0;
    bool diverged = false;
    std::int64_t last_good_epoch = -1;
};

// Stochastic gradient descent with decoupled weight decay:
// v <- mu*v + g;  p <- p - lr*v - lr*wd*p. Buffers are never updated.
template <class T>
class Sgdw {
public:
    Sgdw(double momentum, double weight_decay) : momentum_(momentum), wd_(weight_decay) {}

    void step(const ParamList<T>& params, double lr) {
        if (velocity_.empty()) {
            velocity_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!params[i].is_buffer) {
                    velocity_[i].assign(params[i].tensor->data.size(), T(0));
                }
            }
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].is_buffer) {
                continue;
            }
            auto& p = *params[i].tensor;
            auto& v = velocity_[i];
            const T lr_t = static_cast<T>(lr);
            const T mu = static_cast<T>(momentum_);
            const T decay = static_cast<T>(lr * wd_);
            for (std::size_t j = 0; j < p.data.size(); ++j) {
                v[j] = mu * v[j] + p.grad[j];
                p.data[j] -= lr_t * v[j] + decay * p.data[j];
            }
        }
    }

private:
    double momentum_;
    double wd_;
    std::vector<std::vector<T>> velocity_;
};

// Eval-mode pass over a scene list; returns scored records after NMS.
template <class T>
std::vector<DetectionRecord> detect_scenes(const ToyDetector<T>& model,
                                           const std::vector<ToyScene>& scenes,
                                           std::int64_t batch_size, double nms_iou) {
    NoGradGuard no_grad;
    std::vector<DetectionRecord> records;
    records.reserve(scenes.size());
    for (std::size_t first = 0; first < scenes.size();) {
        const std::size_t count =
            std::min<std::size_t>(static_cast<std::size_t>(batch_size), scenes.size() - first);
        auto images = stack_scenes<T>(scenes, first, count);
        auto out = model.forward(images, /*training=*/false);
        for (std::size_t i = 0; i < count; ++i) {
            DetectionRecord rec;
            rec.dets = nms(decode_detections(*out.obj, *out.box, static_cast<std::int64_t>(i),
                                             DetectorConfig::kStride),
                           nms_iou);
            rec.gts = scenes[first + i].boxes;
            records.push_back(std::move(rec));
        }
        first += count;
    }
    return records;
}

template <class T>
double evaluate_detector(const ToyDetector<T>& model, const std::vector<ToyScene>& scenes,
                         const TrainConfig& cfg) {
    return mr2(detect_scenes(model, scenes, cfg.batch_size, cfg.nms_iou), cfg.mr2_opts);
}

namespace detail {

template <class T>
struct ProbeStats {
    double sum_abs_dw = 0.0;
    double sum_cf = 0.0;
    double sum_cb = 0.0;
    std::int64_t count = 0;

    void absorb(const AttnProbe<T>& probe) {
        for (const auto& site : probe.sites) {
            const auto& dw = site.inter.d_w->data;
            const auto& cf = site.inter.c_fore->data;
            const auto& cb = site.inter.c_back->data;
            for (std::size_t i = 0; i < dw.size(); ++i) {
                sum_abs_dw += std::abs(static_cast<double>(dw[i]));
                sum_cf += static_cast<double>(cf[i]);
                sum_cb += static_cast<double>(cb[i]);
            }
            count += static_cast<std::int64_t>(dw.size());
        }
    }
};

}  // namespace detail

// Trains in place. Scenes are regenerated deterministically from cfg.seed;
// on divergence (non-finite loss) the last finished epoch's parameters are
// restored and the result is flagged.
template <class T>
TrainResult train(ToyDetector<T>& model, const TrainConfig& cfg) {
    cfg.validate();
    const auto train_set =
        make_dataset(cfg.seed, seed_salt::kTrainScenes, cfg.train_scenes, cfg.scene);
    const auto val_set = make_dataset(cfg.seed, seed_salt::kValScenes, cfg.val_scenes, cfg.scene);

    TrainResult result;
    {
        auto both = train_set;
        both.insert(both.end(), val_set.begin(), val_set.end());
        result.dataset_hash = dataset_hash(both);
    }

    const auto params = model.params();
    Sgdw<T> opt(cfg.momentum, cfg.weight_decay);
    RngStream shuffle_rng(derive_seed(cfg.seed, seed_salt::kShuffle, 0));

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    auto snapshot = snapshot_values(params);
    std::vector<ToyScene> batch_scenes;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the dedicated stream keeps epochs reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(shuffle_rng.below(i));
            std::swap(order[i - 1], order[j]);
        }
        double lr = cfg.lr;
        if (cfg.lr_schedule == "cosine") {
            lr = cfg.lr * 0.5 *
                 (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                 static_cast<double>(cfg.epochs)));
        }

        double epoch_loss = 0.0;
        std::int64_t batches = 0;
        double val_mr2 = 1.0;
        detail::ProbeStats<T> stats;
        try {
            for (std::size_t first = 0; first < order.size();) {
                const std::size_t count = std::min<std::size_t>(
                    static_cast<std::size_t>(cfg.batch_size), order.size() - first);
                batch_scenes.clear();
                std::vector<std::vector<Box>> gts;
                for (std::size_t i = 0; i < count; ++i) {
                    batch_scenes.push_back(train_set[order[first + i]]);
                    gts.push_back(batch_scenes.back().boxes);
                }
                auto images = stack_scenes<T>(batch_scenes, 0, count);
                AttnProbe<T> probe;
                auto out = model.forward(images, /*training=*/true, &probe);
                const std::int64_t grid_h = out.obj->shape[2];
                const std::int64_t grid_w = out.obj->shape[3];
                auto targets =
                    build_head_targets<T>(gts, grid_h, grid_w, DetectorConfig::kStride);
                auto loss = head_loss(out, targets, static_cast<T>(cfg.box_loss_weight));
                const double loss_v = static_cast<double>(loss->item());
                if (!std::isfinite(loss_v)) {
                    throw NonFiniteError("training loss is not finite");
                }
                zero_all_grads(params);
                loss->backward();
                opt.step(params, lr);
                epoch_loss += loss_v;
                ++batches;
                stats.absorb(probe);
                first += count;
            }
            val_mr2 = evaluate_detector(model, val_set, cfg);
        } catch (const NonFiniteError&) {
            restore_values(params, snapshot);
            result.diverged = true;
            break;
        }

        EpochRow row;
        row.epoch = epoch;
        row.loss = epoch_loss / static_cast<double>(std::max<std::int64_t>(1, batches));
        row.mr2 = val_mr2;
        if (stats.count > 0) {
            row.mean_abs_dw = stats.sum_abs_dw / static_cast<double>(stats.count);
            row.mean_cf = stats.sum_cf / static_cast<double>(stats.count);
            row.mean_cb = stats.sum_cb / static_cast<double>(stats.count);
        }
        result.history.push_back(row);
        result.final_mr2 = row.mr2;
        result.last_good_epoch = epoch;
        snapshot = snapshot_values(params);
    }
    return result;
}

// Builds the model for cfg (init stream derived from the seed) and trains it.
template <class T>
std::pair<std::unique_ptr<ToyDetector<T>>, TrainResult> run_training(const TrainConfig& cfg) {
    RngStream init_rng(derive_seed(cfg.seed, seed_salt::kModelInit, 0));
    auto model = std::make_unique<ToyDetector<T>>(cfg.arch, init_rng);
    auto result = train(*model, cfg);
    return {std::move(model), std::move(result)};
}

// Ablation over attention kinds. "fbca_no_bg" is fbca with the background
// vector disabled.
struct AblationSpec {
    std::string label;
    AttentionKind kind = AttentionKind::None;
    bool include_background = true;
};

inline AblationSpec parse_ablation_kind(const std::string& label) {
    if (label == "fbca_no_bg") {
        return {label, AttentionKind::Fbca, false};
    }
    return {label, parse_attention_kind(label), true};
}

struct AblationRow {
    std::string kind;
    std::uint64_t seed = 0;
    double mr2 = 1.0;
};

// Runs kinds sequentially; seeds of one kind run in parallel on up to
// `jobs` threads. Row order (kind-major, seed-minor) and all values are
// independent of the thread count.
template <class T>
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<std::string>& kinds,
                                      const std::vector<std::uint64_t>& seeds, int jobs) {
    std::vector<AblationRow> rows(kinds.size() * seeds.size());
    const int workers = std::max(1, jobs);
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const auto spec = parse_ablation_kind(kinds[ki]);
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t si = static_cast<std::size_t>(w); si < seeds.size();
                     si += static_cast<std::size_t>(workers)) {
                    TrainConfig cfg = base;
                    cfg.seed = seeds[si];
                    cfg.arch.attention = spec.kind;
                    cfg.arch.include_background = spec.include_background;
                    auto [model, result] = run_training<T>(cfg);
                    rows[ki * seeds.size() + si] = {spec.label, seeds[si], result.final_mr2};
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return rows;
}

}  // namespace fbc
