#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fbc/toyscene.hpp"
#include "oracles.hpp"

using fbc::SceneConfig;

TEST_CASE("scenes are byte-identical for the same seed and differ across seeds") {
    SceneConfig cfg;
    fbc::RngStream a(12345);
    fbc::RngStream b(12345);
    fbc::RngStream c(54321);
    const auto s1 = fbc::make_toy_scene(a, cfg);
    const auto s2 = fbc::make_toy_scene(b, cfg);
    const auto s3 = fbc::make_toy_scene(c, cfg);
    CHECK(s1.image == s2.image);
    REQUIRE(s1.boxes.size() == s2.boxes.size());
    CHECK(s1.image != s3.image);
}

TEST_CASE("boxes lie inside the image and extents are multiples of 8") {
    SceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        fbc::RngStream rng(seed);
        const auto scene = fbc::make_toy_scene(rng, cfg);
        CHECK(scene.width % 8 == 0);
        CHECK(scene.height % 8 == 0);
        CHECK(scene.boxes.size() >= 1);
        CHECK(scene.boxes.size() <= 4);
        for (const auto& box : scene.boxes) {
            CHECK(box.x >= 0);
            CHECK(box.y >= 0);
            CHECK(box.x + box.w <= scene.width);
            CHECK(box.y + box.h <= scene.height);
            CHECK(box.h / box.w >= 1.5);  // elongated foreground
        }
        for (const float v : scene.image) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("bad extents are rejected") {
    SceneConfig cfg;
    cfg.width = 60;  // not a multiple of 8
    fbc::RngStream rng(1);
    CHECK_THROWS(fbc::make_toy_scene(rng, cfg));
}

TEST_CASE("zero contrast makes foreground invisible: oracle detector misses everything") {
    SceneConfig cfg;
    cfg.contrast = 0.0;
    cfg.max_distractors = 0;
    std::vector<fbc::DetectionRecord> records;
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        fbc::RngStream rng(seed);
        const auto scene = fbc::make_toy_scene(rng, cfg);
        fbc::DetectionRecord rec;
        rec.dets = oracle::threshold_detector(scene, 0.14);
        rec.gts = scene.boxes;
        records.push_back(std::move(rec));
    }
    CHECK(fbc::mr2(records) >= 0.9);
}

TEST_CASE("full contrast makes the oracle detector nearly perfect") {
    SceneConfig cfg;
    cfg.contrast = 1.0;
    cfg.max_distractors = 6;
    std::vector<fbc::DetectionRecord> records;
    for (std::uint64_t seed = 200; seed < 240; ++seed) {
        fbc::RngStream rng(seed);
        const auto scene = fbc::make_toy_scene(rng, cfg);
        fbc::DetectionRecord rec;
        rec.dets = oracle::threshold_detector(scene, 0.14);
        rec.gts = scene.boxes;
        records.push_back(std::move(rec));
    }
    CHECK(fbc::mr2(records) < 0.05);
}

TEST_CASE("distractors never overlap foreground boxes") {
    SceneConfig cfg;
    cfg.contrast = 0.3;
    cfg.max_distractors = 6;
    for (std::uint64_t seed = 300; seed < 330; ++seed) {
        fbc::RngStream rng(seed);
        const auto scene = fbc::make_toy_scene(rng, cfg);
        // Inside every foreground box the luminance stays below the
        // distractor range (0.7+), noise aside.
        for (const auto& box : scene.boxes) {
            for (std::int64_t y = static_cast<std::int64_t>(box.y);
                 y < static_cast<std::int64_t>(box.y + box.h); ++y) {
                for (std::int64_t x = static_cast<std::int64_t>(box.x);
                     x < static_cast<std::int64_t>(box.x + box.w); ++x) {
                    CHECK(scene.luminance(x, y) < 0.65f);
                }
            }
        }
    }
}

TEST_CASE("dataset generation is deterministic and hash-stable") {
    SceneConfig cfg;
    const auto d1 = fbc::make_dataset(42, 7, 10, cfg);
    const auto d2 = fbc::make_dataset(42, 7, 10, cfg);
    const auto d3 = fbc::make_dataset(42, 8, 10, cfg);
    CHECK(fbc::dataset_hash(d1) == fbc::dataset_hash(d2));
    CHECK(fbc::dataset_hash(d1) != fbc::dataset_hash(d3));
    // scenes differ across indices
    CHECK(d1[0].image != d1[1].image);
}

TEST_CASE("dataset cache round-trips images, boxes and meta") {
    namespace fs = std::filesystem;
    SceneConfig cfg;
    const auto scenes = fbc::make_dataset(9, 1, 5, cfg);
    const auto dir = fs::temp_directory_path() / "fbca_cache_test";
    fs::remove_all(dir);
    fbc::save_dataset_cache(dir.string(), scenes);
    const auto loaded = fbc::load_dataset_cache(dir.string());
    REQUIRE(loaded.size() == scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        CHECK(loaded[i].image == scenes[i].image);
        CHECK(loaded[i].boxes.size() == scenes[i].boxes.size());
        CHECK(loaded[i].meta.seed == scenes[i].meta.seed);
    }
    CHECK(fbc::dataset_hash(loaded) == fbc::dataset_hash(scenes));
    fs::remove_all(dir);
}
