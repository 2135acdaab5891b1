#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbc/boxes.hpp"
#include "fbc/rng.hpp"

namespace fbc {

struct SceneConfig {
    std::int64_t width = 64;   // multiples of 8 (head stride)
    std::int64_t height = 64;
    double base_intensity = 0.06;
    double noise_sigma = 0.02;
    // Per-object intensity delta is contrast * U(1/6, 1/2); at the standard
    // task contrast of 0.3 this is the +0.05..+0.15 low-contrast regime.
    double contrast = 0.3;
    std::int64_t min_objects = 1;
    std::int64_t max_objects = 4;
    std::int64_t max_distractors = 6;  // bright circles, never on a foreground box
    std::int64_t min_width = 6;
    std::int64_t max_width = 12;
    double min_aspect = 2.0;  // height / width of foreground blobs
    double max_aspect = 3.0;
};

struct SceneMeta {
    std::uint64_t seed = 0;
    double contrast = 0.0;
    std::int64_t requested_objects = 0;
    std::int64_t placed_objects = 0;
    std::int64_t distractor_count = 0;
};

// Synthetic low-light frame: dark noisy background, a few dim elongated
// foreground blobs (the ground-truth objects) and optional bright circular
// distractors. Pixels are channel-major (3 x H x W) in [0,1].
struct ToyScene {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<float> image;  // 3*H*W
    std::vector<Box> boxes;
    SceneMeta meta;

    float luminance(std::int64_t x, std::int64_t y) const {
        const std::int64_t plane = width * height;
        const std::int64_t i = y * width + x;
        return (image[i] + image[plane + i] + image[2 * plane + i]) / 3.0f;
    }
};

ToyScene make_toy_scene(RngStream& rng, const SceneConfig& cfg);

// Deterministic dataset: scene i draws from the stream derive_seed(seed,
// salt, i). Train and validation sets use different salts.
std::vector<ToyScene> make_dataset(std::uint64_t seed, std::uint64_t salt, std::int64_t count,
                                   const SceneConfig& cfg);

// FNV-1a over pixel bytes, box coordinates and metadata; used to detect
// dataset/seed mismatches between training and evaluation.
std::uint64_t dataset_hash(const std::vector<ToyScene>& scenes);

// Raw f32 blob per scene plus a JSON index.
void save_dataset_cache(const std::string& dir, const std::vector<ToyScene>& scenes);
std::vector<ToyScene> load_dataset_cache(const std::string& dir);

}  // namespace fbc
