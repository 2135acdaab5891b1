#include "fbc/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fbc {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::string& context,
                         const std::set<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("config: unknown key '" + context + item.key() + "'");
        }
    }
}

template <class T>
void read(const json& obj, const char* key, T& into) {
    if (obj.contains(key)) {
        try {
            into = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

void parse_arch(const json& j, DetectorConfig& arch) {
    reject_unknown_keys(j, "arch.",
                        {"stem_channels", "feature_channels", "neck_out_channels",
                         "n_bottlenecks", "hidden_ratio", "pos1_kernel", "pos3_kernel",
                         "attention", "include_background", "residual", "ratio", "eca_kernel",
                         "bias", "leaky_slope", "bn_eps", "bn_momentum", "init"});
    if (j.contains("stem_channels")) {
        auto v = j.at("stem_channels").get<std::vector<std::int64_t>>();
        if (v.size() != 2) {
            throw ConfigError("config: arch.stem_channels needs exactly 2 entries");
        }
        arch.stem_channels = {v[0], v[1]};
    }
    auto read3 = [&](const char* key, std::array<std::int64_t, 3>& into) {
        if (j.contains(key)) {
            auto v = j.at(key).get<std::vector<std::int64_t>>();
            if (v.size() != 3) {
                throw ConfigError(std::string("config: arch.") + key + " needs exactly 3 entries");
            }
            into = {v[0], v[1], v[2]};
        }
    };
    read3("feature_channels", arch.feature_channels);
    read3("neck_out_channels", arch.neck_out_channels);
    read(j, "n_bottlenecks", arch.n_bottlenecks);
    read(j, "hidden_ratio", arch.hidden_ratio);
    read(j, "pos1_kernel", arch.pos1_kernel);
    read(j, "pos3_kernel", arch.pos3_kernel);
    if (j.contains("attention")) {
        try {
            const auto spec = parse_ablation_kind(j.at("attention").get<std::string>());
            arch.attention = spec.kind;
            arch.include_background = spec.include_background;
        } catch (const ShapeError& e) {
            throw ConfigError(std::string("config: arch.attention: ") + e.what());
        }
    }
    read(j, "include_background", arch.include_background);
    read(j, "residual", arch.residual);
    read(j, "ratio", arch.ratio);
    read(j, "eca_kernel", arch.eca_kernel);
    read(j, "bias", arch.bias);
    read(j, "leaky_slope", arch.negative_slope);
    read(j, "bn_eps", arch.bn_eps);
    read(j, "bn_momentum", arch.bn_momentum);
    if (j.contains("init")) {
        try {
            arch.init = parse_init_mode(j.at("init").get<std::string>());
        } catch (const ShapeError& e) {
            throw ConfigError(std::string("config: arch.init: ") + e.what());
        }
    }
}

void parse_scene(const json& j, SceneConfig& scene) {
    reject_unknown_keys(j, "scene.",
                        {"width", "height", "base_intensity", "noise_sigma", "contrast",
                         "min_objects", "max_objects", "max_distractors", "min_width",
                         "max_width", "min_aspect", "max_aspect"});
    read(j, "width", scene.width);
    read(j, "height", scene.height);
    read(j, "base_intensity", scene.base_intensity);
    read(j, "noise_sigma", scene.noise_sigma);
    read(j, "contrast", scene.contrast);
    read(j, "min_objects", scene.min_objects);
    read(j, "max_objects", scene.max_objects);
    read(j, "max_distractors", scene.max_distractors);
    read(j, "min_width", scene.min_width);
    read(j, "max_width", scene.max_width);
    read(j, "min_aspect", scene.min_aspect);
    read(j, "max_aspect", scene.max_aspect);
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + origin + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config: " + origin + ": top level must be an object");
    }

    RunConfig cfg;
    cfg.echo = text;
    reject_unknown_keys(j, "",
                        {"seed", "precision", "out", "jobs", "arch", "scene", "train", "eval",
                         "ablation", "gradcheck", "bench", "dump"});
    read(j, "seed", cfg.seed);
    read(j, "precision", cfg.precision);
    if (cfg.precision != "f64" && cfg.precision != "f32") {
        throw ConfigError("config: precision must be 'f64' or 'f32'");
    }
    read(j, "out", cfg.out_dir);
    read(j, "jobs", cfg.jobs);
    if (cfg.jobs < 1) {
        throw ConfigError("config: jobs must be >= 1");
    }

    if (j.contains("arch")) {
        parse_arch(j.at("arch"), cfg.train.arch);
    }
    if (j.contains("scene")) {
        parse_scene(j.at("scene"), cfg.train.scene);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown_keys(t, "train.",
                            {"lr", "momentum", "weight_decay", "epochs", "batch_size",
                             "train_scenes", "val_scenes", "box_loss_weight", "lr_schedule",
                             "nms_iou", "fppi_points", "write_dataset_cache"});
        read(t, "lr", cfg.train.lr);
        read(t, "momentum", cfg.train.momentum);
        read(t, "weight_decay", cfg.train.weight_decay);
        read(t, "epochs", cfg.train.epochs);
        read(t, "batch_size", cfg.train.batch_size);
        read(t, "train_scenes", cfg.train.train_scenes);
        read(t, "val_scenes", cfg.train.val_scenes);
        read(t, "box_loss_weight", cfg.train.box_loss_weight);
        read(t, "lr_schedule", cfg.train.lr_schedule);
        read(t, "nms_iou", cfg.train.nms_iou);
        read(t, "fppi_points", cfg.train.mr2_opts.n_points);
        read(t, "write_dataset_cache", cfg.write_dataset_cache);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown_keys(e, "eval.", {"weights"});
        read(e, "weights", cfg.eval_weights);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        reject_unknown_keys(a, "ablation.", {"kinds", "seeds", "epochs"});
        read(a, "kinds", cfg.ablation_kinds);
        read(a, "seeds", cfg.ablation_seeds);
        read(a, "epochs", cfg.ablation_epochs);
        for (const auto& k : cfg.ablation_kinds) {
            try {
                parse_ablation_kind(k);
            } catch (const ShapeError& e) {
                throw ConfigError(std::string("config: ablation.kinds: ") + e.what());
            }
        }
        if (cfg.ablation_kinds.empty() || cfg.ablation_seeds.empty() ||
            cfg.ablation_epochs < 1) {
            throw ConfigError("config: ablation needs kinds, seeds and epochs >= 1");
        }
    }
    if (j.contains("gradcheck")) {
        const auto& g = j.at("gradcheck");
        reject_unknown_keys(g, "gradcheck.", {"h", "tol", "seeds", "targets"});
        read(g, "h", cfg.gradcheck_h);
        read(g, "tol", cfg.gradcheck_tol);
        read(g, "seeds", cfg.gradcheck_seeds);
        read(g, "targets", cfg.gradcheck_targets);
        if (cfg.gradcheck_seeds < 1) {
            throw ConfigError("config: gradcheck.seeds must be >= 1");
        }
    }
    if (j.contains("bench")) {
        const auto& b = j.at("bench");
        reject_unknown_keys(b, "bench.", {"channels", "height", "width"});
        read(b, "channels", cfg.bench_channels);
        read(b, "height", cfg.bench_height);
        read(b, "width", cfg.bench_width);
    }
    if (j.contains("dump")) {
        const auto& d = j.at("dump");
        reject_unknown_keys(d, "dump.", {"weights", "image_index"});
        read(d, "weights", cfg.dump_weights);
        read(d, "image_index", cfg.dump_image_index);
    }

    cfg.train.seed = cfg.seed;
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("config: cannot open " + path);
    }
    std::ostringstream os;
    os << in.rdbuf();
    return parse_run_config(os.str(), path);
}

}  // namespace fbc
