#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fbc/image_io.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(FBCA_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path temp_dir(const char* name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small fast run configuration shared by the CLI tests.
std::string small_config(const std::string& extra = "") {
    return R"({
        "seed": 21,
        "arch": {
            "stem_channels": [4, 6],
            "feature_channels": [8, 10, 12],
            "neck_out_channels": [8, 10, 12],
            "ratio": 4
        },
        "scene": {"width": 32, "height": 32, "max_distractors": 0},
        "train": {"epochs": 2, "batch_size": 4, "train_scenes": 10, "val_scenes": 5})" +
           std::string(extra.empty() ? "" : ",") + extra + "\n}";
}

std::string write_config(const fs::path& dir, const std::string& content) {
    const auto path = dir / "config.json";
    std::ofstream(path) << content;
    return path.string();
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

TEST_CASE("corrupt JSON exits with the usage/config code") {
    const auto dir = temp_dir("fbca_cli_corrupt");
    const auto cfg = write_config(dir, "{ not json !");
    CHECK(run_cli("train-toy --config " + cfg) == 2);
    CHECK(run_cli("gradcheck --config " + cfg) == 2);
}

TEST_CASE("missing config file exits with the usage/config code") {
    CHECK(run_cli("train-toy --config /no/such/file.json") == 2);
}

TEST_CASE("unknown subcommands and flags exit with the usage/config code") {
    const auto dir = temp_dir("fbca_cli_usage");
    const auto cfg = write_config(dir, small_config());
    CHECK(run_cli("frobnicate --config " + cfg) == 2);
    CHECK(run_cli("train-toy --config " + cfg + " --frequency 9") == 2);
}

TEST_CASE("gradcheck refuses f32 precision") {
    const auto dir = temp_dir("fbca_cli_f32");
    const auto cfg = write_config(dir, small_config(R"("gradcheck": {"seeds": 1})"));
    CHECK(run_cli("gradcheck --config " + cfg + " --precision f32 --out " +
                  (dir / "out").string()) == 2);
}

TEST_CASE("gradcheck runs a target subset and writes its report") {
    const auto dir = temp_dir("fbca_cli_gradcheck");
    const auto cfg = write_config(
        dir, small_config(R"("gradcheck": {"seeds": 1, "targets": ["fbca"]})"));
    CHECK(run_cli("gradcheck --config " + cfg + " --out " + (dir / "out").string()) == 0);
    const auto lines = read_lines(dir / "out" / "gradcheck_report.csv");
    REQUIRE(lines.size() == 4);  // header + fbca.c{4,8,16}
    CHECK(lines[0] == "check,max_rel_err,tol,status");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        CHECK(lines[i].find("pass") != std::string::npos);
    }
}

TEST_CASE("train-toy writes echo, metrics, weights and dataset; eval-toy matches bit-exactly") {
    const auto dir = temp_dir("fbca_cli_train");
    const auto cfg_text = small_config();
    const auto cfg = write_config(dir, cfg_text);
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("train-toy --config " + cfg + " --out " + out) == 0);

    CHECK(fbc::read_text_file(out + "/config.json") == cfg_text);  // verbatim echo
    CHECK(fs::exists(out + "/weights.json"));
    CHECK(fs::exists(out + "/weights.bin"));
    CHECK(fs::exists(out + "/dataset/index.json"));

    const auto metrics = read_lines(out + "/metrics.csv");
    REQUIRE(metrics.size() == 3);  // header + 2 epochs
    CHECK(metrics[0] == "epoch,loss,mr2,mean_abs_dw,mean_cf,mean_cb");

    // eval-toy recomputes the final val MR2 from the saved weights,
    // bit-exactly equal to the last training-log value.
    const auto eval_cfg = write_config(
        temp_dir("fbca_cli_eval"),
        small_config(R"("eval": {"weights": ")" + out + R"(/weights.json"})"));
    const auto eval_out = (dir / "eval_out").string();
    REQUIRE(run_cli("eval-toy --config " + eval_cfg + " --out " + eval_out) == 0);
    const auto eval_lines = read_lines(eval_out + "/eval.csv");
    REQUIRE(eval_lines.size() == 2);

    const auto last_row = metrics.back();
    std::stringstream row(last_row);
    std::string cell;
    std::getline(row, cell, ',');  // epoch
    std::getline(row, cell, ',');  // loss
    std::getline(row, cell, ',');  // mr2
    const std::string train_mr2 = cell;
    std::stringstream erow(eval_lines[1]);
    std::getline(erow, cell, ',');
    CHECK(cell == train_mr2);  // identical decimal string => identical double
}

TEST_CASE("eval-toy detects dataset/seed mismatch") {
    const auto dir = temp_dir("fbca_cli_mismatch");
    const auto cfg = write_config(dir, small_config());
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("train-toy --config " + cfg + " --out " + out) == 0);
    // Same weights, different seed -> regenerated dataset hash differs.
    const auto eval_cfg = write_config(
        temp_dir("fbca_cli_mismatch2"),
        small_config(R"("eval": {"weights": ")" + out + R"(/weights.json"})"));
    CHECK(run_cli("eval-toy --config " + eval_cfg + " --seed 22 --out " +
                  (dir / "eval_out").string()) == 1);
}

TEST_CASE("ablate with one seed and two kinds emits exactly two data rows") {
    const auto dir = temp_dir("fbca_cli_ablate");
    const auto cfg = write_config(
        dir,
        small_config(R"("ablation": {"kinds": ["none", "fbca"], "seeds": [5], "epochs": 1})"));
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("ablate --config " + cfg + " --out " + out) == 0);
    const auto rows = read_lines(out + "/ablation.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "kind,seed,mr2");
    CHECK(rows[1].rfind("none,5,", 0) == 0);
    CHECK(rows[2].rfind("fbca,5,", 0) == 0);
    const auto summary = read_lines(out + "/ablation_summary.csv");
    REQUIRE(summary.size() == 3);
}

TEST_CASE("bench-attn reports ECA params = 3 and writes the cost table") {
    const auto dir = temp_dir("fbca_cli_bench");
    const auto cfg = write_config(
        dir, small_config(R"("bench": {"channels": 64, "height": 80, "width": 80})"));
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("bench-attn --config " + cfg + " --out " + out) == 0);
    const auto rows = read_lines(out + "/bench.csv");
    REQUIRE(rows.size() == 6);  // header + none, se, eca, coord, fbca
    CHECK(rows[0] == "kind,params,macs");
    bool eca_found = false;
    for (const auto& row : rows) {
        if (row.rfind("eca,3,", 0) == 0) {
            eca_found = true;
        }
    }
    CHECK(eca_found);
}

TEST_CASE("dump-attn on an untrained zero-init model writes uniform gray maps") {
    const auto dir = temp_dir("fbca_cli_dump");
    auto cfg_text = small_config(R"("dump": {"image_index": 0})");
    cfg_text.replace(cfg_text.find("\"ratio\": 4"), 10, "\"ratio\": 4, \"init\": \"zero\"");
    const auto cfg = write_config(dir, cfg_text);
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("dump-attn --config " + cfg + " --out " + out) == 0);

    // Eight FBCA sites -> eight PGMs, all uniform 128 (sigma(0) = 0.5).
    int pgm_count = 0;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().extension() == ".pgm") {
            ++pgm_count;
            const auto content = fbc::read_text_file(entry.path().string());
            const auto header_end = content.find("255\n") + 4;
            for (std::size_t i = header_end; i < content.size(); ++i) {
                CHECK(static_cast<unsigned char>(content[i]) == 128);
            }
        }
    }
    CHECK(pgm_count == 8);
    CHECK(fs::exists(out + "/dump.csv"));
}

TEST_CASE("dump-attn rejects an out-of-range image index") {
    const auto dir = temp_dir("fbca_cli_dump_range");
    const auto cfg = write_config(dir, small_config(R"("dump": {"image_index": 999})"));
    CHECK(run_cli("dump-attn --config " + cfg + " --out " + (dir / "out").string()) == 2);
}

TEST_CASE("identical config and seed give byte-identical outputs") {
    const auto dir = temp_dir("fbca_cli_determinism");
    const auto cfg = write_config(dir, small_config());
    const auto out1 = (dir / "run1").string();
    const auto out2 = (dir / "run2").string();
    REQUIRE(run_cli("train-toy --config " + cfg + " --out " + out1) == 0);
    REQUIRE(run_cli("train-toy --config " + cfg + " --out " + out2) == 0);
    for (const char* file : {"metrics.csv", "weights.bin", "weights.json", "dataset/index.json",
                             "dataset/scene_00000.f32"}) {
        CHECK(fbc::read_text_file(out1 + "/" + file) == fbc::read_text_file(out2 + "/" + file));
    }
}

TEST_CASE("f32 precision trains and evaluates end to end") {
    const auto dir = temp_dir("fbca_cli_f32_train");
    const auto cfg = write_config(dir, small_config());
    const auto out = (dir / "out").string();
    REQUIRE(run_cli("train-toy --config " + cfg + " --precision f32 --out " + out) == 0);
    const auto eval_cfg = write_config(
        temp_dir("fbca_cli_f32_eval"),
        small_config(R"("eval": {"weights": ")" + out + R"(/weights.json"})"));
    CHECK(run_cli("eval-toy --config " + eval_cfg + " --precision f32 --out " +
                  (dir / "eval").string()) == 0);
    // f64 eval against f32 weights is a dtype mismatch -> failure exit.
    CHECK(run_cli("eval-toy --config " + eval_cfg + " --out " + (dir / "eval64").string()) == 1);
}
