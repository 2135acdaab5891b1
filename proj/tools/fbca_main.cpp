// Command-line surface: gradient checking, toy training and evaluation,
// attention ablations, block cost reports and attention-map dumps.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbc/bench.hpp"
#include "fbc/gradsuite.hpp"
#include "fbc/image_io.hpp"
#include "fbc/runconfig.hpp"
#include "fbc/weights_io.hpp"

namespace fs = std::filesystem;
using fbc::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfigError = 2;

void prepare_out_dir(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    // Verbatim copy of the input config for reproducibility.
    fbc::write_text_file((fs::path(cfg.out_dir) / "config.json").string(), cfg.echo);
}

std::string hex_u64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int cmd_gradcheck(const RunConfig& cfg) {
    if (cfg.precision != "f64") {
        throw fbc::ConfigError("gradcheck requires precision f64");
    }
    prepare_out_dir(cfg);
    const auto checks =
        fbc::run_gradcheck_suite(cfg.gradcheck_targets, cfg.gradcheck_seeds, cfg.gradcheck_h);
    std::ostringstream csv;
    csv << "check,max_rel_err,tol,status\n";
    bool all_pass = true;
    for (const auto& c : checks) {
        const bool pass = c.max_rel_err <= cfg.gradcheck_tol;
        all_pass = all_pass && pass;
        csv << c.name << "," << fbc::format_double(c.max_rel_err) << ","
            << fbc::format_double(cfg.gradcheck_tol) << "," << (pass ? "pass" : "FAIL") << "\n";
        std::printf("%-26s max_rel_err=%-12.3e %s\n", c.name.c_str(), c.max_rel_err,
                    pass ? "pass" : "FAIL");
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "gradcheck_report.csv").string(), csv.str());
    std::printf("gradcheck: %zu checks, %s (tol %.1e, %d seeds)\n", checks.size(),
                all_pass ? "all passed" : "FAILURES", cfg.gradcheck_tol, cfg.gradcheck_seeds);
    return all_pass ? kExitOk : kExitCheckFailure;
}

// Layer table: parameter counts grouped by module path.
template <class T>
void print_layer_table(const fbc::ToyDetector<T>& model) {
    std::vector<std::pair<std::string, std::int64_t>> rows;
    std::int64_t total = 0;
    for (const auto& p : model.params()) {
        if (p.is_buffer) {
            continue;
        }
        std::string path = p.name.substr(std::strlen("detector."));
        std::string group = path.substr(0, path.find('.'));
        if (group == "neck") {
            const auto second = path.find('.', 5);
            group = path.substr(0, second == std::string::npos ? path.size() : second);
        }
        if (rows.empty() || rows.back().first != group) {
            rows.emplace_back(group, 0);
        }
        rows.back().second += p.tensor->size();
        total += p.tensor->size();
    }
    std::printf("%-16s %10s\n", "layer", "params");
    for (const auto& [group, count] : rows) {
        std::printf("%-16s %10lld\n", group.c_str(), static_cast<long long>(count));
    }
    std::printf("%-16s %10lld\n", "total", static_cast<long long>(total));
}

template <class T>
int run_train_toy(const RunConfig& cfg) {
    prepare_out_dir(cfg);
    fbc::RngStream init_rng(fbc::derive_seed(cfg.seed, fbc::seed_salt::kModelInit, 0));
    auto model = std::make_unique<fbc::ToyDetector<T>>(cfg.train.arch, init_rng);
    print_layer_table(*model);
    auto result = fbc::train(*model, cfg.train);

    std::ostringstream csv;
    csv << "epoch,loss,mr2,mean_abs_dw,mean_cf,mean_cb\n";
    for (const auto& row : result.history) {
        csv << row.epoch << "," << fbc::format_double(row.loss) << ","
            << fbc::format_double(row.mr2) << "," << fbc::format_double(row.mean_abs_dw) << ","
            << fbc::format_double(row.mean_cf) << "," << fbc::format_double(row.mean_cb) << "\n";
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "metrics.csv").string(), csv.str());

    nlohmann::json meta;
    meta["dataset_hash"] = hex_u64(result.dataset_hash);
    meta["seed"] = cfg.seed;
    meta["final_mr2"] = result.final_mr2;
    meta["epochs_run"] = result.history.size();
    fbc::save_weights<T>((fs::path(cfg.out_dir) / "weights.json").string(), model->params(), meta);

    if (cfg.write_dataset_cache) {
        const auto scenes = fbc::make_dataset(cfg.seed, fbc::seed_salt::kTrainScenes,
                                              cfg.train.train_scenes, cfg.train.scene);
        fbc::save_dataset_cache((fs::path(cfg.out_dir) / "dataset").string(), scenes);
    }

    if (result.diverged) {
        std::printf("train-toy: DIVERGED after epoch %lld; last-good checkpoint saved\n",
                    static_cast<long long>(result.last_good_epoch));
        return kExitCheckFailure;
    }
    std::printf("train-toy: %zu epochs, final val MR2 %.6f (weights + metrics in %s)\n",
                result.history.size(), result.final_mr2, cfg.out_dir.c_str());
    return kExitOk;
}

template <class T>
int run_eval_toy(const RunConfig& cfg) {
    prepare_out_dir(cfg);
    const std::string weights_path =
        cfg.eval_weights.empty() ? (fs::path(cfg.out_dir) / "weights.json").string()
                                 : cfg.eval_weights;

    fbc::RngStream init_rng(fbc::derive_seed(cfg.seed, fbc::seed_salt::kModelInit, 0));
    fbc::ToyDetector<T> model(cfg.train.arch, init_rng);
    const auto meta = fbc::load_weights<T>(weights_path, model.params());

    const auto train_set = fbc::make_dataset(cfg.seed, fbc::seed_salt::kTrainScenes,
                                             cfg.train.train_scenes, cfg.train.scene);
    const auto val_set = fbc::make_dataset(cfg.seed, fbc::seed_salt::kValScenes,
                                           cfg.train.val_scenes, cfg.train.scene);
    if (meta.contains("dataset_hash")) {
        auto both = train_set;
        both.insert(both.end(), val_set.begin(), val_set.end());
        const auto have = hex_u64(fbc::dataset_hash(both));
        const auto want = meta.at("dataset_hash").template get<std::string>();
        if (have != want) {
            std::printf("eval-toy: dataset/seed mismatch (hash %s, weights trained on %s)\n",
                        have.c_str(), want.c_str());
            return kExitCheckFailure;
        }
    }

    const double value = fbc::evaluate_detector(model, val_set, cfg.train);
    std::ostringstream csv;
    csv << "mr2,val_scenes,iou_thresh,fppi_points\n";
    csv << fbc::format_double(value) << "," << cfg.train.val_scenes << ","
        << fbc::format_double(cfg.train.mr2_opts.iou_thresh) << "," << cfg.train.mr2_opts.n_points
        << "\n";
    fbc::write_text_file((fs::path(cfg.out_dir) / "eval.csv").string(), csv.str());
    std::printf("eval-toy: val MR2 %.17g over %lld scenes\n", value,
                static_cast<long long>(cfg.train.val_scenes));
    return kExitOk;
}

template <class T>
int run_ablate(const RunConfig& cfg) {
    prepare_out_dir(cfg);
    fbc::TrainConfig base = cfg.train;
    base.epochs = cfg.ablation_epochs;
    const auto rows = fbc::run_ablation<T>(base, cfg.ablation_kinds, cfg.ablation_seeds, cfg.jobs);

    std::ostringstream csv;
    csv << "kind,seed,mr2\n";
    for (const auto& row : rows) {
        csv << row.kind << "," << row.seed << "," << fbc::format_double(row.mr2) << "\n";
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "ablation.csv").string(), csv.str());

    std::ostringstream summary;
    summary << "kind,mean_mr2,sd_mr2\n";
    std::map<std::string, std::pair<double, double>> means;
    const auto n_seeds = static_cast<double>(cfg.ablation_seeds.size());
    std::printf("%-12s %-10s %-10s\n", "kind", "mean MR2", "sd");
    for (const auto& kind : cfg.ablation_kinds) {
        double sum = 0.0;
        double sum_sq = 0.0;
        for (const auto& row : rows) {
            if (row.kind == kind) {
                sum += row.mr2;
                sum_sq += row.mr2 * row.mr2;
            }
        }
        const double mean = sum / n_seeds;
        const double var = std::max(0.0, sum_sq / n_seeds - mean * mean);
        const double sd = std::sqrt(var);
        means[kind] = {mean, sd};
        summary << kind << "," << fbc::format_double(mean) << "," << fbc::format_double(sd)
                << "\n";
        std::printf("%-12s %-10.4f %-10.4f\n", kind.c_str(), mean, sd);
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "ablation_summary.csv").string(), summary.str());

    // Qualitative direction: full attention should not trail its no-background
    // ablation or the plain block. A deviation is reported, not fatal; toy
    // transfer of the full-scale ordering is not guaranteed.
    if (means.count("fbca")) {
        const double fbca_mean = means["fbca"].first;
        for (const char* other : {"fbca_no_bg", "none"}) {
            if (means.count(other) && fbca_mean > means[other].first) {
                std::printf("WARNING: mean MR2(fbca)=%.4f exceeds MR2(%s)=%.4f\n", fbca_mean,
                            other, means[other].first);
            }
        }
    }
    return kExitOk;
}

template <class T>
int run_bench(const RunConfig& cfg) {
    prepare_out_dir(cfg);
    std::ostringstream csv;
    csv << "kind,params,macs\n";
    std::printf("%-8s %-10s %-12s  (C=%lld H=%lld W=%lld)\n", "kind", "params", "macs",
                static_cast<long long>(cfg.bench_channels),
                static_cast<long long>(cfg.bench_height), static_cast<long long>(cfg.bench_width));
    for (const auto kind : {fbc::AttentionKind::None, fbc::AttentionKind::Se,
                            fbc::AttentionKind::Eca, fbc::AttentionKind::Coord,
                            fbc::AttentionKind::Fbca}) {
        fbc::AttentionConfig acfg;
        acfg.kind = kind;
        acfg.channels = cfg.bench_channels;
        acfg.fbca_kernel = cfg.train.arch.pos1_kernel;
        acfg.ratio = fbc::fit_ratio(cfg.bench_channels, cfg.train.arch.ratio);
        acfg.eca_kernel = cfg.train.arch.eca_kernel;
        const auto params = fbc::attention_param_count(acfg);
        const auto macs = fbc::attention_macs(acfg, cfg.bench_height, cfg.bench_width);
        csv << fbc::attention_kind_name(kind) << "," << params << "," << macs << "\n";
        std::printf("%-8s %-10lld %-12llu\n", fbc::attention_kind_name(kind),
                    static_cast<long long>(params), static_cast<unsigned long long>(macs));
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "bench.csv").string(), csv.str());
    return kExitOk;
}

template <class T>
int run_dump(const RunConfig& cfg) {
    prepare_out_dir(cfg);
    fbc::RngStream init_rng(fbc::derive_seed(cfg.seed, fbc::seed_salt::kModelInit, 0));
    fbc::ToyDetector<T> model(cfg.train.arch, init_rng);
    if (!cfg.dump_weights.empty()) {
        fbc::load_weights<T>(cfg.dump_weights, model.params());
    }

    const auto val_set = fbc::make_dataset(cfg.seed, fbc::seed_salt::kValScenes,
                                           cfg.train.val_scenes, cfg.train.scene);
    if (cfg.dump_image_index < 0 ||
        cfg.dump_image_index >= static_cast<std::int64_t>(val_set.size())) {
        throw fbc::ConfigError("dump: image_index " + std::to_string(cfg.dump_image_index) +
                               " out of range [0," + std::to_string(val_set.size()) + ")");
    }

    fbc::NoGradGuard no_grad;
    auto images = fbc::stack_scenes<T>(val_set, static_cast<std::size_t>(cfg.dump_image_index), 1);
    fbc::AttnProbe<T> probe;
    model.forward(images, /*training=*/false, &probe);

    std::ostringstream csv;
    csv << "block_id,channel,c_fore,c_back,d_w\n";
    for (const auto& site : probe.sites) {
        const auto& map = *site.inter.map_fore;
        const std::int64_t h = map.shape[2];
        const std::int64_t w = map.shape[3];
        std::vector<double> pixels(static_cast<std::size_t>(h * w));
        for (std::int64_t i = 0; i < h * w; ++i) {
            pixels[static_cast<std::size_t>(i)] =
                static_cast<double>(map.data[static_cast<std::size_t>(i)]);
        }
        fbc::write_pgm((fs::path(cfg.out_dir) / (site.id + ".fmap_fore.pgm")).string(), pixels, w,
                       h);
        const std::int64_t channels = site.inter.d_w->shape[1];
        for (std::int64_t c = 0; c < channels; ++c) {
            csv << site.id << "," << c << ","
                << fbc::format_double(static_cast<double>(site.inter.c_fore->data[c])) << ","
                << fbc::format_double(static_cast<double>(site.inter.c_back->data[c])) << ","
                << fbc::format_double(static_cast<double>(site.inter.d_w->data[c])) << "\n";
        }
    }
    fbc::write_text_file((fs::path(cfg.out_dir) / "dump.csv").string(), csv.str());
    std::printf("dump-attn: wrote %zu attention sites for image %lld into %s\n",
                probe.sites.size(), static_cast<long long>(cfg.dump_image_index),
                cfg.out_dir.c_str());
    return kExitOk;
}

template <int (*F64)(const RunConfig&), int (*F32)(const RunConfig&)>
int dispatch(const RunConfig& cfg) {
    return cfg.precision == "f64" ? F64(cfg) : F32(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fore-background contrast attention toolbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::string precision_override;
    std::uint64_t seed_override = 0;
    bool has_seed = false;
    int jobs_override = 0;

    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--seed", seed_override, "override config seed")->each([&](const std::string&) {
        has_seed = true;
    });
    app.add_option("--out", out_override, "override output directory");
    app.add_option("--jobs", jobs_override, "parallel workers for ablation seeds");
    app.add_option("--precision", precision_override, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));

    auto* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    auto* c_train = app.add_subcommand("train-toy", "train the toy detector");
    auto* c_eval = app.add_subcommand("eval-toy", "recompute toy MR2 from saved weights");
    auto* c_ablate = app.add_subcommand("ablate", "attention-kind ablation over seeds");
    auto* c_bench = app.add_subcommand("bench-attn", "attention block cost table");
    auto* c_dump = app.add_subcommand("dump-attn", "dump activation maps and channel gates");
    for (auto* sub : {c_gradcheck, c_train, c_eval, c_ablate, c_bench, c_dump}) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfigError;
    }

    try {
        RunConfig cfg = fbc::load_run_config(config_path);
        if (has_seed) {
            cfg.seed = seed_override;
            cfg.train.seed = seed_override;
        }
        if (!out_override.empty()) {
            cfg.out_dir = out_override;
        }
        if (!precision_override.empty()) {
            cfg.precision = precision_override;
        }
        if (jobs_override > 0) {
            cfg.jobs = jobs_override;
        }

        if (c_gradcheck->parsed()) {
            return cmd_gradcheck(cfg);
        }
        if (c_train->parsed()) {
            return dispatch<run_train_toy<double>, run_train_toy<float>>(cfg);
        }
        if (c_eval->parsed()) {
            return dispatch<run_eval_toy<double>, run_eval_toy<float>>(cfg);
        }
        if (c_ablate->parsed()) {
            return dispatch<run_ablate<double>, run_ablate<float>>(cfg);
        }
        if (c_bench->parsed()) {
            return dispatch<run_bench<double>, run_bench<float>>(cfg);
        }
        if (c_dump->parsed()) {
            return dispatch<run_dump<double>, run_dump<float>>(cfg);
        }
        return kExitConfigError;
    } catch (const fbc::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailure;
    }
}
