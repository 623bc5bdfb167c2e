#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "dsr_test_cli";

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" DSR_CLI_PATH "\" " + args + " > \"" + (kRoot / "stdout.txt").string() +
                            "\" 2> \"" + (kRoot / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kPipelineConfig = R"({
  "seed": 3,
  "data": {"T": 3, "L": 2, "input_level": 1, "point_spacing": 0.3,
           "pretrain_pairs": 24, "validation_pairs": 6, "finetune_patches": 2, "test_patches": 3,
           "pretrain_geometries": [{"kind": "straight_tube", "radius": 1.5, "length": 6.0}],
           "target_geometry": {"kind": "torus_segment", "radius": 1.4, "bend_radius": 6.0, "angle": 2.0}},
  "model": {"unet3d": {"patch_exponent": 3, "depth": 1, "base_channels": 2}},
  "train": {"epochs": 2, "lp_epochs": 2, "ft_epochs": 1, "sigma2": 0.01},
  "predict": {"J": 2, "sigma2": 0.01}
})";

const char* kSimConfig = R"({
  "sim": {"n": 40, "n_eval": 5, "oracle_draws": 50, "predict_draws": 4},
  "model": {"mlp": {"hidden": [4]}},
  "train": {"epochs": 3}
})";

}  // namespace

TEST_CASE("pipeline commands chain through their artifacts") {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    const auto cfg = kRoot / "pipe.json";
    write(cfg, kPipelineConfig);
    const std::string c = " -c \"" + cfg.string() + "\"";
    const auto data = kRoot / "data";

    REQUIRE(run("synth" + c + " -o \"" + data.string() + "\"") == 0);
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "resolved-config.json"));
    const auto manifest = nlohmann::json::parse(slurp(data / "manifest.json"));
    std::size_t counted = 0;
    for (const auto& [k, v] : manifest["counts"].items()) counted += v.get<std::size_t>();
    CHECK(counted == manifest["records"].size());

    const auto pre = kRoot / "pre";
    REQUIRE(run("pretrain" + c + " --data \"" + data.string() + "\" -o \"" + pre.string() + "\"") == 0);
    CHECK(fs::exists(pre / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(pre / "resolved-config.json"));

    const auto ft = kRoot / "ft";
    CHECK(run("finetune" + c + " --data \"" + data.string() + "\" --checkpoint \"" + (kRoot / "nope").string() +
              "\" -o \"" + ft.string() + "\"") == 4);
    const auto err = nlohmann::json::parse(slurp(kRoot / "stderr.txt"));
    CHECK(err["error"] == "missing_artifact");
    CHECK(err["message"].get<std::string>().find("nope") != std::string::npos);

    REQUIRE(run("finetune" + c + " --data \"" + data.string() + "\" --checkpoint \"" + (pre / "checkpoint").string() +
                "\" -o \"" + ft.string() + "\"") == 0);
    const auto report = nlohmann::json::parse(slurp(ft / "train_report.json"));
    CHECK(report["epochs"] == 3);

    const auto pred = kRoot / "pred";
    REQUIRE(run("predict" + c + " --data \"" + data.string() + "\" --checkpoint \"" + (ft / "checkpoint").string() +
                "\" -o \"" + pred.string() + "\"") == 0);
    CHECK(fs::exists(pred / "reconstructed.csv"));
    const auto metrics = nlohmann::json::parse(slurp(pred / "metrics.json"));
    CHECK(metrics["test_patch_mse"].get<double>() >= 0);

    const auto ev = kRoot / "eval";
    REQUIRE(run("evaluate --pred \"" + (pred / "reconstructed.csv").string() + "\" --truth \"" +
                (pred / "reconstructed.csv").string() + "\" -o \"" + ev.string() + "\"") == 0);
    const auto zero = nlohmann::json::parse(slurp(ev / "metrics.json"));
    for (const char* k : {"mse_x", "mse_y", "mse_z", "mse_magnitude", "mse"}) CHECK(zero[k].get<double>() == 0.0);
}

TEST_CASE("config errors map to exit code 2") {
    fs::create_directories(kRoot);
    const auto cfg = kRoot / "bad.json";
    write(cfg, R"({"data": {"T": 3, "typo": 1}})");
    CHECK(run("synth -c \"" + cfg.string() + "\" -o \"" + (kRoot / "bad").string() + "\"") == 2);
    CHECK(nlohmann::json::parse(slurp(kRoot / "stderr.txt"))["error"] == "config_error");
    write(cfg, R"({"dat": {}})");
    CHECK(run("synth -c \"" + cfg.string() + "\" -o \"" + (kRoot / "bad").string() + "\"") == 2);
    CHECK(run("simulate --g tanh -o \"" + (kRoot / "bad").string() + "\"") == 2);
}

TEST_CASE("simulate is byte-reproducible and honours DSR_SEED") {
    fs::create_directories(kRoot);
    const auto cfg = kRoot / "sim.json";
    write(cfg, kSimConfig);
    const std::string base = "simulate -c \"" + cfg.string() + "\" --g square --dim 3 --runs 2 -o ";
    REQUIRE(run(base + "\"" + (kRoot / "s1").string() + "\"") == 0);
    REQUIRE(run(base + "\"" + (kRoot / "s2").string() + "\"") == 0);
    const std::string a = slurp(kRoot / "s1" / "sim_square_d3.csv");
    CHECK(a == slurp(kRoot / "s2" / "sim_square_d3.csv"));
    std::size_t lines = 0;
    for (char ch : a) lines += ch == '\n';
    CHECK(lines == 1 + 2 * 5);
    REQUIRE(run(base + "\"" + (kRoot / "s3").string() + "\"", "DSR_SEED=77") == 0);
    CHECK(a != slurp(kRoot / "s3" / "sim_square_d3.csv"));
    const auto resolved = nlohmann::json::parse(slurp(kRoot / "s3" / "resolved-config.json"));
    CHECK(resolved["seed"] == 77);
}

TEST_CASE("simulate sweep covers every g and dimension") {
    fs::create_directories(kRoot);
    const auto cfg = kRoot / "sim.json";
    write(cfg, kSimConfig);
    REQUIRE(run("simulate -c \"" + cfg.string() + "\" --sweep --runs 1 -o \"" + (kRoot / "sweep").string() + "\"") == 0);
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(kRoot / "sweep")) csvs += e.path().extension() == ".csv";
    CHECK(csvs == 8);
}

TEST_CASE("gradcheck passes and catches a sign flip") {
    fs::create_directories(kRoot);
    CHECK(run("gradcheck") == 0);
    const std::string out = slurp(kRoot / "stdout.txt");
    CHECK(out.find("mlp+energy_scalar") != std::string::npos);
    CHECK(out.find("unet3d_16+energy_vector") != std::string::npos);
    CHECK(run("gradcheck --flip-sign") != 0);
}
