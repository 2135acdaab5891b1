#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbc/train.hpp"

namespace fbc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parsed CLI configuration: one JSON file drives every subcommand. Unknown
// keys are rejected; the raw file bytes are kept for verbatim echoing into
// the output directory.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string precision = "f64";
    std::string out_dir = "out";
    int jobs = 1;

    TrainConfig train;  // arch + scene + optimizer settings
    bool write_dataset_cache = true;

    std::string eval_weights;

    std::vector<std::string> ablation_kinds{"none", "se",  "eca",
                                            "coord", "fbca_no_bg", "fbca"};
    std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};
    std::int64_t ablation_epochs = 150;

    double gradcheck_h = 1e-5;
    double gradcheck_tol = 1e-4;
    int gradcheck_seeds = 10;
    std::vector<std::string> gradcheck_targets;  // empty = all

    std::int64_t bench_channels = 64;
    std::int64_t bench_height = 80;
    std::int64_t bench_width = 80;

    std::string dump_weights;  // empty = freshly initialized model
    std::int64_t dump_image_index = 0;

    std::string echo;  // raw config file contents
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin);

}  // namespace fbc
