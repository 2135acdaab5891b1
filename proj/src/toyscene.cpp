#include "fbc/toyscene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fbc {

namespace {

using nlohmann::json;

// Overlap test with a dilation margin; objects keep a gap so threshold
// components never merge across instances.
bool boxes_overlap(const Box& a, const Box& b, double margin) {
    return a.x - margin < b.x + b.w && b.x < a.x + a.w + margin && a.y - margin < b.y + b.h &&
           b.y < a.y + a.h + margin;
}

constexpr double kSeparation = 2.0;

void add_ellipse(std::vector<float>& img, std::int64_t width, std::int64_t height, const Box& box,
                 float delta) {
    const double cx = box.x + box.w / 2.0;
    const double cy = box.y + box.h / 2.0;
    const double rx = box.w / 2.0;
    const double ry = box.h / 2.0;
    const std::int64_t plane = width * height;
    for (std::int64_t y = static_cast<std::int64_t>(box.y); y < box.y + box.h; ++y) {
        for (std::int64_t x = static_cast<std::int64_t>(box.x); x < box.x + box.w; ++x) {
            const double dx = (x + 0.5 - cx) / rx;
            const double dy = (y + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
                const std::int64_t i = y * width + x;
                img[i] += delta;
                img[plane + i] += delta;
                img[2 * plane + i] += delta;
            }
        }
    }
}

void set_circle(std::vector<float>& img, std::int64_t width, std::int64_t height, double cx,
                double cy, double radius, float level) {
    const std::int64_t plane = width * height;
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - radius - 1));
    const std::int64_t x1 = std::min(width - 1, static_cast<std::int64_t>(cx + radius + 1));
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - radius - 1));
    const std::int64_t y1 = std::min(height - 1, static_cast<std::int64_t>(cy + radius + 1));
    for (std::int64_t y = y0; y <= y1; ++y) {
        for (std::int64_t x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                const std::int64_t i = y * width + x;
                img[i] = level;
                img[plane + i] = level;
                img[2 * plane + i] = level;
            }
        }
    }
}

}  // namespace

ToyScene make_toy_scene(RngStream& rng, const SceneConfig& cfg) {
    if (cfg.width % 8 != 0 || cfg.height % 8 != 0 || cfg.width < 16 || cfg.height < 16) {
        throw std::invalid_argument("scene extents must be multiples of 8 and at least 16");
    }
    ToyScene scene;
    scene.width = cfg.width;
    scene.height = cfg.height;
    scene.meta.seed = rng.seed();
    scene.meta.contrast = cfg.contrast;

    const std::int64_t plane = cfg.width * cfg.height;
    scene.image.assign(static_cast<std::size_t>(3 * plane), 0.0f);
    for (auto& v : scene.image) {
        v = static_cast<float>(cfg.base_intensity + cfg.noise_sigma * rng.normal());
    }

    // Foreground blobs: dim, elongated, mutually non-overlapping.
    const std::int64_t want =
        rng.uniform_int(cfg.min_objects, std::max(cfg.min_objects, cfg.max_objects));
    scene.meta.requested_objects = want;
    constexpr int kRetries = 40;
    for (std::int64_t i = 0; i < want; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
            const std::int64_t bw = rng.uniform_int(cfg.min_width, cfg.max_width);
            const double aspect = rng.uniform(cfg.min_aspect, cfg.max_aspect);
            const std::int64_t bh = std::min<std::int64_t>(
                cfg.height / 2, std::max<std::int64_t>(bw + 1, std::llround(bw * aspect)));
            const std::int64_t bx = rng.uniform_int(1, cfg.width - bw - 1);
            const std::int64_t by = rng.uniform_int(1, cfg.height - bh - 1);
            const Box box{static_cast<double>(bx), static_cast<double>(by),
                          static_cast<double>(bw), static_cast<double>(bh)};
            bool clash = false;
            for (const auto& other : scene.boxes) {
                if (boxes_overlap(box, other, kSeparation)) {
                    clash = true;
                    break;
                }
            }
            if (clash) {
                continue;
            }
            const double delta = cfg.contrast * rng.uniform(1.0 / 6.0, 0.5);
            add_ellipse(scene.image, cfg.width, cfg.height, box, static_cast<float>(delta));
            scene.boxes.push_back(box);
            placed = true;
        }
        // Placement can fail on crowded small frames; the scene just carries
        // fewer objects and meta records it.
    }
    scene.meta.placed_objects = static_cast<std::int64_t>(scene.boxes.size());

    // Bright circular distractors, kept clear of every foreground box and
    // of each other.
    const std::int64_t want_distractors =
        cfg.max_distractors > 0 ? rng.uniform_int(0, cfg.max_distractors) : 0;
    std::vector<Box> distractor_boxes;
    for (std::int64_t i = 0; i < want_distractors; ++i) {
        for (int attempt = 0; attempt < kRetries; ++attempt) {
            const double radius = static_cast<double>(rng.uniform_int(2, 5));
            const double cx = rng.uniform(radius + 1.0, cfg.width - radius - 1.0);
            const double cy = rng.uniform(radius + 1.0, cfg.height - radius - 1.0);
            const Box bbox{cx - radius, cy - radius, 2 * radius, 2 * radius};
            bool clash = false;
            for (const auto& fg : scene.boxes) {
                if (boxes_overlap(bbox, fg, kSeparation)) {
                    clash = true;
                    break;
                }
            }
            for (const auto& other : distractor_boxes) {
                if (boxes_overlap(bbox, other, kSeparation)) {
                    clash = true;
                    break;
                }
            }
            if (clash) {
                continue;
            }
            const float level = static_cast<float>(rng.uniform(0.7, 1.0));
            set_circle(scene.image, cfg.width, cfg.height, cx, cy, radius, level);
            distractor_boxes.push_back(bbox);
            ++scene.meta.distractor_count;
            break;
        }
    }

    for (auto& v : scene.image) {
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return scene;
}

std::vector<ToyScene> make_dataset(std::uint64_t seed, std::uint64_t salt, std::int64_t count,
                                   const SceneConfig& cfg) {
    std::vector<ToyScene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        RngStream rng(derive_seed(seed, salt, static_cast<std::uint64_t>(i)));
        scenes.push_back(make_toy_scene(rng, cfg));
    }
    return scenes;
}

std::uint64_t dataset_hash(const std::vector<ToyScene>& scenes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& s : scenes) {
        mix_bytes(&s.width, sizeof(s.width));
        mix_bytes(&s.height, sizeof(s.height));
        mix_bytes(s.image.data(), s.image.size() * sizeof(float));
        for (const auto& b : s.boxes) {
            mix_bytes(&b, sizeof(Box));
        }
        mix_bytes(&s.meta.seed, sizeof(s.meta.seed));
    }
    return h;
}

void save_dataset_cache(const std::string& dir, const std::vector<ToyScene>& scenes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json index;
    index["format"] = "fbca-dataset-v1";
    index["count"] = scenes.size();
    index["hash"] = dataset_hash(scenes);
    json entries = json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.f32", i);
        std::ofstream blob(fs::path(dir) / name, std::ios::binary);
        if (!blob) {
            throw std::runtime_error("cannot write scene blob in " + dir);
        }
        blob.write(reinterpret_cast<const char*>(s.image.data()),
                   static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        json entry;
        entry["file"] = name;
        entry["width"] = s.width;
        entry["height"] = s.height;
        entry["seed"] = s.meta.seed;
        entry["contrast"] = s.meta.contrast;
        entry["requested_objects"] = s.meta.requested_objects;
        entry["placed_objects"] = s.meta.placed_objects;
        entry["distractors"] = s.meta.distractor_count;
        json boxes = json::array();
        for (const auto& b : s.boxes) {
            boxes.push_back({b.x, b.y, b.w, b.h});
        }
        entry["boxes"] = boxes;
        entries.push_back(entry);
    }
    index["scenes"] = entries;
    std::ofstream out(fs::path(dir) / "index.json");
    out << index.dump(2) << "\n";
}

std::vector<ToyScene> load_dataset_cache(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "index.json");
    if (!in) {
        throw std::runtime_error("no dataset index at " + dir);
    }
    json index = json::parse(in);
    std::vector<ToyScene> scenes;
    for (const auto& entry : index.at("scenes")) {
        ToyScene s;
        s.width = entry.at("width").get<std::int64_t>();
        s.height = entry.at("height").get<std::int64_t>();
        s.meta.seed = entry.at("seed").get<std::uint64_t>();
        s.meta.contrast = entry.at("contrast").get<double>();
        s.meta.requested_objects = entry.at("requested_objects").get<std::int64_t>();
        s.meta.placed_objects = entry.at("placed_objects").get<std::int64_t>();
        s.meta.distractor_count = entry.at("distractors").get<std::int64_t>();
        for (const auto& b : entry.at("boxes")) {
            s.boxes.push_back(Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                  b[3].get<double>()});
        }
        const auto path = fs::path(dir) / entry.at("file").get<std::string>();
        std::ifstream blob(path, std::ios::binary);
        if (!blob) {
            throw std::runtime_error("missing scene blob " + path.string());
        }
        s.image.resize(static_cast<std::size_t>(3 * s.width * s.height));
        blob.read(reinterpret_cast<char*>(s.image.data()),
                  static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        if (!blob) {
            throw std::runtime_error("truncated scene blob " + path.string());
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace fbc
