// dsr: command-line front end for the synthetic pipeline, simulations and
// the gradient check harness.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dsr/errors.hpp"
#include "dsr/grad_check.hpp"
#include "dsr/json_util.hpp"
#include "dsr/pipeline.hpp"
#include "dsr/simlab.hpp"
#include "dsr/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace dsr;

namespace {

struct Resolved {
    json raw;  // the user document, kept for echoing
    std::uint64_t seed = 0;
    DataConfig data;
    std::string data_dir;
    std::optional<UNet3dSpec> unet;
    std::optional<MlpSpec> mlp;
    json train_section = json::object();
    PredictSpec predict;
    json sim_section = json::object();
};

Resolved load_config(const std::string& path, std::optional<std::uint64_t> seed_flag) {
    Resolved r;
    r.raw = path.empty() ? json::object() : read_json_file(path);
    reject_unknown_keys(r.raw, {"data", "model", "train", "predict", "sim", "seed"}, "config");
    read_opt(r.raw, "seed", r.seed, "config");
    if (const char* env = std::getenv("DSR_SEED")) {
        try {
            r.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("DSR_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    if (seed_flag) r.seed = *seed_flag;

    if (r.raw.contains("data")) {
        json d = r.raw["data"];
        if (!d.is_object()) throw ConfigError("data: expected a JSON object");
        if (d.contains("dir")) {
            read_opt(d, "dir", r.data_dir, "data");
            d.erase("dir");
        }
        r.data = data_config_from_json(d);
    }
    if (r.raw.contains("model")) {
        const json& m = r.raw["model"];
        reject_unknown_keys(m, {"unet3d", "mlp"}, "model");
        if (m.contains("unet3d")) r.unet = unet_spec_from_json(m["unet3d"]);
        if (m.contains("mlp")) r.mlp = mlp_spec_from_json(m["mlp"]);
    }
    if (r.raw.contains("train")) r.train_section = r.raw["train"];
    PredictSpec ps;
    ps.seed = r.seed;
    r.predict = r.raw.contains("predict") ? predict_spec_from_json(r.raw["predict"], ps) : ps;
    if (r.raw.contains("sim")) r.sim_section = r.raw["sim"];
    return r;
}

TrainConfig train_config(const Resolved& r, TrainConfig base = {}) {
    base.seed = r.seed;
    return train_config_from_json(r.train_section, base);
}

UNet3dSpec unet_for(const Resolved& r, std::size_t T) {
    UNet3dSpec s = r.unet.value_or(UNet3dSpec{});
    if (!r.unet) s.patch_exponent = T;
    if (s.patch_exponent != T) {
        throw ConfigError("model.unet3d.patch_exponent " + std::to_string(s.patch_exponent) +
                          " does not match the data resolution T=" + std::to_string(T));
    }
    return s;
}

void echo_config(const fs::path& out, const json& resolved) {
    fs::create_directories(out);
    write_json_file(out / "resolved-config.json", resolved);
}

json resolved_json(const Resolved& r, const std::string& command) {
    json j = {{"command", command}, {"seed", r.seed}};
    json data = data_config_to_json(r.data);
    if (!r.data_dir.empty()) data["dir"] = r.data_dir;
    j["data"] = data;
    j["predict"] = predict_spec_to_json(r.predict);
    j["train"] = train_config_to_json(train_config(r));
    if (r.unet) j["model"]["unet3d"] = arch_to_json(*r.unet);
    if (r.mlp) j["model"]["mlp"] = arch_to_json(*r.mlp);
    return j;
}

fs::path data_dir(const Resolved& r, const std::string& flag) {
    const std::string d = flag.empty() ? r.data_dir : flag;
    if (d.empty()) throw UsageError("no data directory: pass --data or set data.dir");
    return d;
}

std::size_t manifest_T(const LoadedManifest& m) { return m.raw.at("T").get<std::size_t>(); }

int cmd_synth(const Resolved& r, const fs::path& out) {
    echo_config(out, resolved_json(r, "synth"));
    const SynthDataset ds = build_synthetic(r.data, r.seed);
    write_synthetic(ds, out);
    std::cout << "epsilon " << ds.epsilon << " mm\n";
    for (const char* s : {"pretrain", "validation", "finetune", "test"}) std::cout << s << ' ' << ds.count(s) << '\n';
    std::cout << "patch records " << ds.pairs.size() + ds.targets.size() << " written to " << out << '\n';
    return 0;
}

int cmd_pretrain(const Resolved& r, const fs::path& data, const fs::path& out) {
    const LoadedManifest m = load_manifest(data);
    const UNet3dSpec spec = unet_for(r, manifest_T(m));
    TrainConfig tc = train_config(r);
    tc.checkpoint_dir = out / "checkpoint";
    tc.progress = &std::cerr;
    json res = resolved_json(r, "pretrain");
    res["model"]["unet3d"] = arch_to_json(spec);
    echo_config(out, res);
    const Dataset<float> train = manifest_dataset(m, "pretrain");
    const Dataset<float> val = manifest_dataset(m, "validation");
    if (train.size() == 0) throw ConfigError("manifest has no pretrain records");
    const auto result = pretrain(build_unet3d<float>(spec, r.seed), train, val.size() ? &val : nullptr, tc);
    write_json_file(out / "train_report.json", result.report.to_json());
    std::cout << "checkpoint " << result.report.checkpoint << '\n';
    return 0;
}

int cmd_finetune(const Resolved& r, const fs::path& data, const fs::path& ckpt, const fs::path& out) {
    const LoadedManifest m = load_manifest(data);
    const ModelParams<float> pre = load_checkpoint<float>(ckpt);
    TrainConfig tc = train_config(r);
    tc.checkpoint_dir = out / "checkpoint";
    tc.progress = &std::cerr;
    json res = resolved_json(r, "finetune");
    res["pretrained_checkpoint"] = ckpt.string();
    echo_config(out, res);
    const Dataset<float> train = manifest_dataset(m, "finetune");
    if (train.size() == 0) throw ConfigError("manifest has no finetune records");
    const auto result = finetune_lpft(pre, train, nullptr, tc);
    write_json_file(out / "train_report.json", result.report.to_json());
    std::cout << "checkpoint " << result.report.checkpoint << '\n';
    return 0;
}

void write_points_csv(const fs::path& path, const std::vector<Vec3>& points, const std::vector<Vec3>& vel) {
    VelocityPointCloud c{points, vel};
    write_cloud_csv(path, c);
}

int cmd_predict(const Resolved& r, const fs::path& data, const fs::path& ckpt, const fs::path& out) {
    const LoadedManifest m = load_manifest(data);
    const ModelParams<float> model = load_checkpoint<float>(ckpt);
    json res = resolved_json(r, "predict");
    res["checkpoint"] = ckpt.string();
    echo_config(out, res);
    fs::create_directories(out / "predictions");
    const std::size_t T = manifest_T(m);

    std::vector<PredictedPatch> patches;
    double sq = 0, sq_id = 0;
    std::size_t n_test = 0;
    for (const auto& rec : m.records) {
        // Every target patch is predicted so the partition covers the vessel.
        if (rec.split == "pretrain" || rec.split == "validation") continue;
        const json side = read_json_file(m.dir / rec.sidecar);
        const Tensor<float> in = read_dsrt<double>(m.dir / rec.input).cast<float>();
        PredictSpec ps = r.predict;
        ps.seed = r.predict.seed + patches.size();
        const Tensor<double> pred = mc_upsample(model, in, ps).cast<double>();
        write_dsrt(out / "predictions" / (rec.id + ".dsrt"), pred);
        Box box;
        box.lo = side.at("box").at("lo").get<Vec3>();
        box.hi = side.at("box").at("hi").get<Vec3>();
        patches.push_back({grid_on_box(box, T), pred});
        if (rec.split == "test") {
            const Tensor<double> tg = read_dsrt<double>(m.dir / rec.target);
            for (std::size_t i = 0; i < tg.size(); ++i) {
                sq += (pred[i] - tg[i]) * (pred[i] - tg[i]);
                sq_id += (in[i] - tg[i]) * (in[i] - tg[i]);
            }
            n_test += tg.size();
        }
    }
    const VelocityPointCloud truth = read_cloud_csv(m.dir / m.raw.at("clouds").at("target_clean").get<std::string>());
    const ReconstructedField field = reconstruct_shape(patches, truth.points);
    write_points_csv(out / "reconstructed.csv", truth.points, field.velocities);
    json metrics = {{"test_patch_mse", n_test ? sq / n_test : 0.0},
                    {"identity_patch_mse", n_test ? sq_id / n_test : 0.0},
                    {"patches_predicted", patches.size()},
                    {"points", evaluate(field.velocities, truth.velocities).to_json()}};
    write_json_file(out / "metrics.json", metrics);
    std::cout << metrics.dump(2) << '\n';
    return 0;
}

int cmd_evaluate(const fs::path& pred, const fs::path& truth, const fs::path& out) {
    const VelocityPointCloud p = read_cloud_csv(pred);
    const VelocityPointCloud t = read_cloud_csv(truth);
    echo_config(out, {{"command", "evaluate"}, {"pred", pred.string()}, {"truth", truth.string()}});
    const json metrics = evaluate(p.velocities, t.velocities).to_json();
    write_json_file(out / "metrics.json", metrics);
    std::cout << metrics.dump(2) << '\n';
    return 0;
}

struct SimFlags {
    std::string g = "square";
    std::size_t dim = 3;
    std::optional<std::size_t> runs, n, parallel;
    bool sweep = false;
};

int cmd_simulate(const Resolved& r, const SimFlags& f, const fs::path& out) {
    std::vector<std::pair<GName, std::size_t>> jobs;
    if (f.sweep) {
        for (std::size_t d : {std::size_t{3}, std::size_t{64}})
            for (GName g : kAllG) jobs.emplace_back(g, d);
    } else {
        jobs.emplace_back(parse_g(f.g), f.dim);
    }
    json resolved = {{"command", "simulate"}, {"seed", r.seed}, {"jobs", json::array()}};
    std::vector<SimConfig> cfgs;
    for (const auto& [g, d] : jobs) {
        SimConfig c = default_sim_config(d, g);
        c.seed = r.seed;
        json sec = r.sim_section;
        sec.erase("g");
        sec.erase("dim");
        c = sim_config_from_json(sec, c);
        if (r.mlp) {
            c.mlp = *r.mlp;
            c.mlp.input_dim = d;
        }
        c.train = train_config(r, c.train);
        if (f.runs) c.runs = *f.runs;
        if (f.n) c.n = *f.n;
        if (f.parallel) c.parallel = *f.parallel;
        c.validate();
        json cj = sim_config_to_json(c);
        cj["mlp"] = arch_to_json(c.mlp);
        cj["train"] = train_config_to_json(c.train);
        resolved["jobs"].push_back(cj);
        cfgs.push_back(c);
    }
    echo_config(out, resolved);
    for (const auto& c : cfgs) {
        const std::string stem = "sim_" + g_name(c.g) + "_d" + std::to_string(c.dim);
        const RunReport rep = run_comparison(c, &std::cerr);
        std::ofstream csv(out / (stem + ".csv"), std::ios::binary);
        if (!csv) throw IoError("cannot write " + (out / (stem + ".csv")).string());
        rep.write_csv(csv);
        const json s = rep.summary();
        write_json_file(out / (stem + "_summary.json"), s);
        std::cout << stem << ' ' << s["median"].dump() << '\n';
        if (rep.successful() == 0) throw NumericError(stem + ": every run failed");
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool flip, const std::string& out) {
    const auto cases = run_gradcheck_suite(seed, flip);
    bool ok = true;
    json report = json::array();
    for (const auto& c : cases) {
        ok = ok && c.passed();
        std::cout << (c.passed() ? "PASS " : "FAIL ") << c.name << " [" << c.precision << "] max_rel_error "
                  << c.result.max_rel_error << " (threshold " << c.threshold << ", " << c.result.probes
                  << " probes)\n";
        report.push_back({{"name", c.name},
                          {"precision", c.precision},
                          {"threshold", c.threshold},
                          {"max_rel_error", c.result.max_rel_error},
                          {"probes", c.result.probes},
                          {"worst_param", c.result.worst_param},
                          {"passed", c.passed()}});
    }
    if (!out.empty()) {
        fs::create_directories(out);
        write_json_file(fs::path(out) / "gradcheck.json", report);
        write_json_file(fs::path(out) / "resolved-config.json",
                        {{"command", "gradcheck"}, {"seed", seed}, {"flip_sign", flip}});
    }
    return ok ? 0 : 1;
}

int exit_code_for(const Error& e) {
    const std::string k = e.kind();
    if (k == "numeric_error" || k == "degenerate_direction") return 3;
    if (k == "missing_artifact") return 4;
    return 2;
}

void report_error(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributional super-resolution toolkit"};
    app.require_subcommand(1);
    std::string config_path, out_dir, data_flag, ckpt;
    std::optional<std::uint64_t> seed_flag;
    std::size_t threads = 0;

    auto common = [&](CLI::App* sub, bool needs_out = true) {
        sub->add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        auto* o = sub->add_option("-o,--out", out_dir, "output directory");
        if (needs_out) o->required();
        sub->add_option("--seed", seed_flag, "base seed (overrides config and DSR_SEED)");
        sub->add_option("--threads", threads, "OpenMP threads for kernels");
    };

    auto* synth = app.add_subcommand("synth", "generate clouds, patches and the manifest");
    common(synth);
    auto* pre = app.add_subcommand("pretrain", "pre-train the U-Net on pyramid pairs");
    common(pre);
    pre->add_option("--data", data_flag, "dataset directory (manifest.json)");
    auto* ft = app.add_subcommand("finetune", "LP-FT fine-tune a pre-trained checkpoint");
    common(ft);
    ft->add_option("--data", data_flag, "dataset directory");
    ft->add_option("--checkpoint", ckpt, "pre-trained checkpoint directory")->required();
    auto* pred = app.add_subcommand("predict", "Monte-Carlo predictions and shape reconstruction");
    common(pred);
    pred->add_option("--data", data_flag, "dataset directory");
    pred->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
    auto* ev = app.add_subcommand("evaluate", "MSE metrics between two point-cloud CSVs");
    std::string pred_csv, truth_csv;
    ev->add_option("--pred", pred_csv, "predicted cloud CSV")->required();
    ev->add_option("--truth", truth_csv, "reference cloud CSV")->required();
    ev->add_option("-o,--out", out_dir, "output directory")->required();
    auto* sim = app.add_subcommand("simulate", "DSR vs L2 extrapolation study");
    common(sim);
    SimFlags sf;
    sim->add_option("--g", sf.g, "link function")->check(CLI::IsMember({"softplus", "square", "log", "cubic"}));
    sim->add_option("--dim", sf.dim, "input dimension")->check(CLI::IsMember({3, 64}));
    sim->add_option("--runs", sf.runs, "replicates");
    sim->add_option("--n", sf.n, "training sample size");
    sim->add_option("--parallel", sf.parallel, "replicates run concurrently");
    sim->add_flag("--sweep", sf.sweep, "all four g values for both dimensions");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every composite");
    bool flip = false;
    std::uint64_t gc_seed = 7;
    gc->add_option("--seed", gc_seed, "probe seed");
    gc->add_flag("--flip-sign", flip, "negate analytic gradients (mutation check)");
    gc->add_option("-o,--out", out_dir, "optional report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        report_error("usage_error", e.what(), 2);
        return 2;
    }

    try {
#ifdef _OPENMP
        if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
#endif
        if (*gc) return cmd_gradcheck(gc_seed, flip, out_dir);
        if (*ev) return cmd_evaluate(pred_csv, truth_csv, out_dir);
        const Resolved r = load_config(config_path, seed_flag);
        if (*synth) return cmd_synth(r, out_dir);
        if (*pre) return cmd_pretrain(r, data_dir(r, data_flag), out_dir);
        if (*ft) return cmd_finetune(r, data_dir(r, data_flag), ckpt, out_dir);
        if (*pred) return cmd_predict(r, data_dir(r, data_flag), ckpt, out_dir);
        if (*sim) return cmd_simulate(r, sf, out_dir);
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        report_error(e.kind(), e.what(), code);
        return code;
    } catch (const fs::filesystem_error& e) {
        report_error("io_error", e.what(), 2);
        return 2;
    } catch (const std::exception& e) {
        report_error("internal_error", e.what(), 1);
        return 1;
    }
    return 0;
}
