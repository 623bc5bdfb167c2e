#include "dsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "dsr/simlab.hpp"
#include "dsr/tensor_io.hpp"

namespace dsr {
namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) { return run_seed(seed ^ (salt * 0x9e3779b97f4a7c15ULL), salt); }

std::string geometry_name(GeometryKind k) { return k == GeometryKind::straight_tube ? "straight_tube" : "torus_segment"; }

GeometryKind parse_geometry(const std::string& s) {
    if (s == "straight_tube") return GeometryKind::straight_tube;
    if (s == "torus_segment") return GeometryKind::torus_segment;
    throw ConfigError("unknown geometry kind '" + s + "'");
}

json geometry_to_json(const TubeGeometry& g) {
    return {{"kind", geometry_name(g.kind)}, {"radius", g.radius}, {"length", g.length},
            {"bend_radius", g.bend_radius}, {"angle", g.angle}};
}

TubeGeometry geometry_from_json(const json& j) {
    reject_unknown_keys(j, {"kind", "radius", "length", "bend_radius", "angle"}, "data.geometry");
    TubeGeometry g;
    std::string kind = geometry_name(g.kind);
    read_opt(j, "kind", kind, "data.geometry");
    g.kind = parse_geometry(kind);
    read_opt(j, "radius", g.radius, "data.geometry");
    read_opt(j, "length", g.length, "data.geometry");
    read_opt(j, "bend_radius", g.bend_radius, "data.geometry");
    read_opt(j, "angle", g.angle, "data.geometry");
    return g;
}

// Split sizes scaled to the available count when fewer exist than requested.
std::pair<std::size_t, std::size_t> scaled_split(std::size_t available, std::size_t want_a, std::size_t want_b) {
    if (available >= want_a + want_b) return {want_a, want_b};
    if (available < 2) return {available, 0};
    const double frac = static_cast<double>(want_a) / static_cast<double>(want_a + want_b);
    std::size_t a = static_cast<std::size_t>(std::lround(frac * static_cast<double>(available)));
    a = std::clamp<std::size_t>(a, 1, available - 1);
    return {a, available - a};
}

// Copies a patch into its own cloud, rigidly rotated about the patch center
// by a uniformly random rotation. Pre-training tubes are axis-aligned, so
// without this every pair has the same flow direction.
NeighborhoodPatch rotated_patch(const NeighborhoodPatch& p, const VelocityPointCloud& cloud, std::mt19937_64& rng,
                                VelocityPointCloud& local) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng), a = 2 * std::numbers::pi * u(rng), b = 2 * std::numbers::pi * u(rng);
    const double x = std::sqrt(1 - u1) * std::sin(a), y = std::sqrt(1 - u1) * std::cos(a);
    const double z = std::sqrt(u1) * std::sin(b), w = std::sqrt(u1) * std::cos(b);
    const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                            {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                            {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
    auto rotate = [&](const Vec3& v) {
        return Vec3{R[0][0] * v[0] + R[0][1] * v[1] + R[0][2] * v[2], R[1][0] * v[0] + R[1][1] * v[1] + R[1][2] * v[2],
                    R[2][0] * v[0] + R[2][1] * v[1] + R[2][2] * v[2]};
    };
    const Vec3& c = cloud.points[p.center];
    local.points.clear();
    local.velocities.clear();
    NeighborhoodPatch q = p;
    q.members.clear();
    for (std::size_t i : p.members) {
        const Vec3& pt = cloud.points[i];
        const Vec3 r = rotate({pt[0] - c[0], pt[1] - c[1], pt[2] - c[2]});
        if (i == p.center) q.center = local.size();
        q.members.push_back(local.size());
        local.points.push_back({c[0] + r[0], c[1] + r[1], c[2] + r[2]});
        local.velocities.push_back(rotate(cloud.velocities[i]));
    }
    return q;
}

Dataset<float> stack(const std::vector<const Tensor<double>*>& in, const std::vector<const Tensor<double>*>& tg) {
    if (in.empty()) return {};
    Shape s = in.front()->shape();
    s.insert(s.begin(), in.size());
    Dataset<float> d{Tensor<float>(s), Tensor<float>(s)};
    const std::size_t unit = in.front()->size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        for (std::size_t k = 0; k < unit; ++k) {
            d.inputs[i * unit + k] = static_cast<float>((*in[i])[k]);
            d.targets[i * unit + k] = static_cast<float>((*tg[i])[k]);
        }
    }
    return d;
}

Tensor<float> row_of(const Tensor<float>& t, std::size_t i) {
    const Shape rs = row_shape(t.shape());
    const std::size_t unit = numel(rs);
    return Tensor<float>(rs, std::vector<float>(t.ptr() + i * unit, t.ptr() + (i + 1) * unit));
}

struct Scored {
    double mse = 0;
    double sigma2 = 0;
};

Scored finetune_and_score(const ModelParams<float>& start, const Dataset<float>& ft, const Dataset<float>& test,
                          const PipelineConfig& cfg, std::uint64_t seed) {
    TrainConfig tc = cfg.finetune;
    tc.seed = seed;
    tc.checkpoint_dir.clear();
    tc.progress = nullptr;
    auto res = finetune_lpft(start, ft, nullptr, tc);
    PredictSpec ps = cfg.predict;
    ps.seed = mix(seed, 77);
    if (cfg.tune_sigma2) ps.sigma2 = select_sigma2(res.model, ft, ps);
    return {patch_mse(predict_rows(res.model, test, ps), test.targets), ps.sigma2};
}

}  // namespace

void DataConfig::validate() const {
    if (T < 1) throw ConfigError("data.T must be >= 1");
    if (L < 1 || L > T) throw ConfigError("data.L must be in [1, T] so 2^T is divisible by 2^L");
    if (input_level > T) throw ConfigError("data.input_level must be <= T");
    if (!(point_spacing > 0)) throw ConfigError("data.point_spacing must be positive");
    if (sigma_v < 0) throw ConfigError("data.sigma_v must be >= 0");
    if (epsilon < 0) throw ConfigError("data.epsilon must be >= 0 (0 = calibrate)");
    if (!(patch_spacing > 0)) throw ConfigError("data.patch_spacing must be positive");
    if (pretrain_geometries.empty()) throw ConfigError("data.pretrain_geometries must not be empty");
}

DataConfig data_config_from_json(const json& j, DataConfig c) {
    const std::string where = "data";
    reject_unknown_keys(j, {"T", "L", "input_level", "point_spacing", "u_max", "sigma_v", "bias_base", "bias_amplitude",
                            "bias_wavelength", "epsilon", "patch_spacing", "rotate_pretrain", "pretrain_pairs", "validation_pairs",
                            "finetune_patches", "test_patches", "pretrain_geometries", "target_geometry"},
                        where);
    read_opt(j, "T", c.T, where);
    read_opt(j, "L", c.L, where);
    read_opt(j, "input_level", c.input_level, where);
    read_opt(j, "point_spacing", c.point_spacing, where);
    read_opt(j, "u_max", c.u_max, where);
    read_opt(j, "sigma_v", c.sigma_v, where);
    read_opt(j, "bias_base", c.bias.base, where);
    read_opt(j, "bias_amplitude", c.bias.amplitude, where);
    read_opt(j, "bias_wavelength", c.bias.wavelength, where);
    read_opt(j, "epsilon", c.epsilon, where);
    read_opt(j, "patch_spacing", c.patch_spacing, where);
    read_opt(j, "rotate_pretrain", c.rotate_pretrain, where);
    read_opt(j, "pretrain_pairs", c.pretrain_pairs, where);
    read_opt(j, "validation_pairs", c.validation_pairs, where);
    read_opt(j, "finetune_patches", c.finetune_patches, where);
    read_opt(j, "test_patches", c.test_patches, where);
    if (j.contains("pretrain_geometries")) {
        if (!j["pretrain_geometries"].is_array()) throw ConfigError("data.pretrain_geometries must be an array");
        c.pretrain_geometries.clear();
        for (const auto& g : j["pretrain_geometries"]) c.pretrain_geometries.push_back(geometry_from_json(g));
    }
    if (j.contains("target_geometry")) c.target_geometry = geometry_from_json(j["target_geometry"]);
    c.validate();
    return c;
}

json data_config_to_json(const DataConfig& c) {
    json geos = json::array();
    for (const auto& g : c.pretrain_geometries) geos.push_back(geometry_to_json(g));
    return {{"T", c.T},
            {"L", c.L},
            {"input_level", c.input_level},
            {"point_spacing", c.point_spacing},
            {"u_max", c.u_max},
            {"sigma_v", c.sigma_v},
            {"bias_base", c.bias.base},
            {"bias_amplitude", c.bias.amplitude},
            {"bias_wavelength", c.bias.wavelength},
            {"epsilon", c.epsilon},
            {"patch_spacing", c.patch_spacing},
            {"rotate_pretrain", c.rotate_pretrain},
            {"pretrain_pairs", c.pretrain_pairs},
            {"validation_pairs", c.validation_pairs},
            {"finetune_patches", c.finetune_patches},
            {"test_patches", c.test_patches},
            {"pretrain_geometries", geos},
            {"target_geometry", geometry_to_json(c.target_geometry)}};
}

std::size_t SynthDataset::count(const std::string& split) const {
    std::size_t k = 0;
    for (const auto& s : pair_split) k += s == split ? 1 : 0;
    for (const auto& t : targets) k += t.split == split ? 1 : 0;
    return k;
}

SynthDataset build_synthetic(const DataConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SynthDataset ds;
    ds.config = cfg;
    for (std::size_t k = 0; k < cfg.pretrain_geometries.size(); ++k) {
        ds.pretrain_clouds.push_back(synth_flow(cfg.pretrain_geometries[k], cfg.point_spacing, cfg.u_max, mix(seed, 10 + k)));
    }
    ds.epsilon = cfg.epsilon > 0 ? cfg.epsilon : calibrate_epsilon(ds.pretrain_clouds.front(), cfg.T, mix(seed, 2));
    const double spacing = cfg.patch_spacing * ds.epsilon;

    // Pre-training pyramid pairs, split by source patch.
    std::size_t patch_id = 0;
    for (std::size_t k = 0; k < ds.pretrain_clouds.size(); ++k) {
        const auto& cloud = ds.pretrain_clouds[k];
        std::mt19937_64 rot_rng(mix(seed, 40 + k));
        VelocityPointCloud local;
        for (const auto& p : partition_geometry(cloud, ds.epsilon, spacing, mix(seed, 30 + k))) {
            const VelocityTensor target = cfg.rotate_pretrain
                                              ? voxelize_patch(rotated_patch(p, cloud, rot_rng, local), local, cfg.T)
                                              : voxelize_patch(p, cloud, cfg.T);
            for (auto& pair : downsample_pyramid(target.values, cfg.L)) {
                pair.provenance = "pretrain" + std::to_string(k) + "/patch" + std::to_string(patch_id) + "/" + pair.provenance;
                ds.pairs.push_back(std::move(pair));
                ds.pair_patch.push_back(patch_id);
            }
            ++patch_id;
        }
    }
    {
        std::vector<std::size_t> order(patch_id);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(mix(seed, 3));
        std::shuffle(order.begin(), order.end(), rng);
        // Validation share in patches mirrors the requested pair ratio.
        const double frac = static_cast<double>(cfg.validation_pairs) /
                            static_cast<double>(cfg.pretrain_pairs + cfg.validation_pairs);
        std::size_t val_patches = patch_id < 2 ? 0 : std::max<std::size_t>(1, std::lround(frac * patch_id));
        val_patches = std::min(val_patches, patch_id - 1);
        std::vector<bool> is_val(patch_id, false);
        for (std::size_t i = 0; i < val_patches; ++i) is_val[order[i]] = true;
        // Caps are filled in shuffled patch order so every geometry contributes.
        std::vector<std::vector<std::size_t>> by_patch(patch_id);
        for (std::size_t i = 0; i < ds.pairs.size(); ++i) by_patch[ds.pair_patch[i]].push_back(i);
        std::size_t n_p = 0, n_v = 0;
        std::vector<PatchPair> kept;
        std::vector<std::size_t> kept_patch;
        for (std::size_t pid : order) {
            const bool v = is_val[pid];
            std::size_t& n = v ? n_v : n_p;
            for (std::size_t i : by_patch[pid]) {
                if (n >= (v ? cfg.validation_pairs : cfg.pretrain_pairs)) break;
                ++n;
                kept.push_back(std::move(ds.pairs[i]));
                kept_patch.push_back(pid);
                ds.pair_split.push_back(v ? "validation" : "pretrain");
            }
        }
        ds.pairs = std::move(kept);
        ds.pair_patch = std::move(kept_patch);
    }

    // Target vessel: clean field as ground truth, degraded field as input.
    ds.target_clean = synth_flow(cfg.target_geometry, cfg.point_spacing, cfg.u_max, mix(seed, 4));
    ds.target_degraded = degrade_to_4df(ds.target_clean, cfg.sigma_v, cfg.bias, mix(seed, 5));
    const auto patches = partition_geometry(ds.target_clean, ds.epsilon, spacing, mix(seed, 6));
    for (const auto& p : patches) {
        NeighborhoodPatch q = p;
        q.t = std::min(q.t, cfg.T);
        const VoxelGrid grid = make_grid(q, ds.target_clean);
        const VelocityTensor clean = resize_nearest(assign_velocities(q, grid, ds.target_clean), cfg.T);
        const VelocityTensor noisy = resize_nearest(assign_velocities(q, grid, ds.target_degraded), cfg.T);
        ds.targets.push_back({q, clean.grid, degrade_resolution(noisy.values, cfg.input_level), clean.values, ""});
    }
    const auto [n_ft, n_test] = scaled_split(ds.targets.size(), cfg.finetune_patches, cfg.test_patches);
    std::vector<std::size_t> order(ds.targets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix(seed, 7));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
        ds.targets[order[i]].split = i < n_ft ? "finetune" : (i < n_ft + n_test ? "test" : "unused");
    }
    return ds;
}

Dataset<float> pair_dataset(const SynthDataset& ds, const std::string& split, std::size_t max_level) {
    std::vector<const Tensor<double>*> in, tg;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        if (ds.pair_split[i] != split) continue;
        if (max_level > 0 && ds.pairs[i].level > max_level) continue;
        in.push_back(&ds.pairs[i].input);
        tg.push_back(&ds.pairs[i].target);
    }
    return stack(in, tg);
}

Dataset<float> target_dataset(const SynthDataset& ds, const std::string& split) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.targets.size(); ++i)
        if (ds.targets[i].split == split) rows.push_back(i);
    return target_dataset(ds.targets, rows);
}

Dataset<float> target_dataset(const std::vector<TargetPatch>& patches, const std::vector<std::size_t>& rows) {
    std::vector<const Tensor<double>*> in, tg;
    for (std::size_t r : rows) {
        in.push_back(&patches[r].input);
        tg.push_back(&patches[r].target);
    }
    return stack(in, tg);
}

void write_synthetic(const SynthDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "clouds");
    fs::create_directories(dir / "patches");
    json clouds = json::array();
    for (std::size_t k = 0; k < ds.pretrain_clouds.size(); ++k) {
        const std::string f = "clouds/pretrain" + std::to_string(k) + ".csv";
        write_cloud_csv(dir / f, ds.pretrain_clouds[k]);
        clouds.push_back(f);
    }
    write_cloud_csv(dir / "clouds/target_clean.csv", ds.target_clean);
    write_cloud_csv(dir / "clouds/target_degraded.csv", ds.target_degraded);

    json records = json::array();
    auto emit = [&](const std::string& id, const Tensor<double>& in, const Tensor<double>& tg, json sidecar,
                    std::size_t level, const std::string& split) {
        const std::string base = "patches/" + id;
        write_dsrt(dir / (base + "_input.dsrt"), in);
        write_dsrt(dir / (base + "_target.dsrt"), tg);
        sidecar["level"] = level;
        sidecar["split"] = split;
        sidecar["epsilon"] = ds.epsilon;
        sidecar["T"] = ds.config.T;
        write_json_file(dir / (base + ".json"), sidecar);
        records.push_back({{"id", id},
                           {"input", base + "_input.dsrt"},
                           {"target", base + "_target.dsrt"},
                           {"sidecar", base + ".json"},
                           {"level", level},
                           {"split", split}});
    };
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        const auto& p = ds.pairs[i];
        const std::string id = "pair" + std::to_string(ds.pair_patch[i]) + "_l" + std::to_string(p.level);
        emit(id, p.input, p.target, {{"provenance", p.provenance}, {"t", ds.config.T}}, p.level, ds.pair_split[i]);
    }
    for (std::size_t i = 0; i < ds.targets.size(); ++i) {
        const auto& t = ds.targets[i];
        const auto& c = ds.target_clean.points[t.patch.center];
        json side = {{"center", {c[0], c[1], c[2]}},
                     {"center_index", t.patch.center},
                     {"t", t.patch.t},
                     {"box", {{"lo", t.grid.box.lo}, {"hi", t.grid.box.hi}}},
                     {"provenance", "target/patch" + std::to_string(i)}};
        emit("target" + std::to_string(i), t.input, t.target, side, ds.config.input_level, t.split);
    }
    json counts;
    for (const char* s : {"pretrain", "validation", "finetune", "test", "unused"}) counts[s] = ds.count(s);
    json manifest = {{"epsilon", ds.epsilon},
                     {"T", ds.config.T},
                     {"L", ds.config.L},
                     {"K", ds.targets.size()},
                     {"counts", counts},
                     {"clouds", {{"pretrain", clouds},
                                 {"target_clean", "clouds/target_clean.csv"},
                                 {"target_degraded", "clouds/target_degraded.csv"}}},
                     {"records", records}};
    write_json_file(dir / "manifest.json", manifest);
}

LoadedManifest load_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) throw MissingArtifactError(path.string());
    LoadedManifest m;
    m.dir = dir;
    m.raw = read_json_file(path);
    try {
        for (const auto& r : m.raw.at("records")) {
            m.records.push_back({r.at("id").get<std::string>(), r.at("input").get<std::string>(),
                                 r.at("target").get<std::string>(), r.at("sidecar").get<std::string>(),
                                 r.at("level").get<std::size_t>(), r.at("split").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

Dataset<float> manifest_dataset(const LoadedManifest& m, const std::string& split) {
    std::vector<Tensor<double>> in, tg;
    for (const auto& r : m.records) {
        if (r.split != split) continue;
        in.push_back(read_dsrt<double>(m.dir / r.input));
        tg.push_back(read_dsrt<double>(m.dir / r.target));
    }
    std::vector<const Tensor<double>*> pi, pt;
    for (std::size_t i = 0; i < in.size(); ++i) {
        pi.push_back(&in[i]);
        pt.push_back(&tg[i]);
    }
    return stack(pi, pt);
}

double patch_mse(const Tensor<float>& pred, const Tensor<float>& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("patch_mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    }
    double acc = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

Tensor<float> predict_rows(const ModelParams<float>& model, const Dataset<float>& data, const PredictSpec& spec) {
    Tensor<float> out(data.inputs.shape());
    const std::size_t unit = data.inputs.size() / std::max<std::size_t>(1, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        PredictSpec ps = spec;
        ps.seed = spec.seed + i;
        const Tensor<float> y = mc_upsample(model, row_of(data.inputs, i), ps);
        std::copy_n(y.ptr(), unit, out.ptr() + i * unit);
    }
    return out;
}

double select_sigma2(const ModelParams<float>& model, const Dataset<float>& data, PredictSpec spec) {
    double best = kSigma2Sweep.front(), best_mse = std::numeric_limits<double>::infinity();
    for (double s2 : kSigma2Sweep) {
        spec.sigma2 = s2;
        const double mse = patch_mse(predict_rows(model, data, spec), data.targets);
        if (mse < best_mse) {
            best_mse = mse;
            best = s2;
        }
    }
    return best;
}

double AblationReport::median(const std::string& variant) const {
    std::vector<double> v;
    for (const auto& r : results)
        if (r.name == variant) v.push_back(r.test_mse);
    return quantile(v, 0.5);
}

json AblationReport::to_json() const {
    json rows = json::array();
    std::vector<std::string> names;
    for (const auto& r : results) {
        rows.push_back({{"variant", r.name}, {"seed", r.seed}, {"test_mse", r.test_mse}, {"sigma2", r.sigma2}});
        if (std::find(names.begin(), names.end(), r.name) == names.end()) names.push_back(r.name);
    }
    json med;
    for (const auto& n : names) med[n] = median(n);
    return {{"results", rows}, {"median_test_mse", med}};
}

AblationReport ablation_suite(const SynthDataset& ds, const PipelineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              std::vector<ModelParams<float>>* pretrained_out) {
    const Dataset<float> ft = target_dataset(ds, "finetune");
    const Dataset<float> test = target_dataset(ds, "test");
    const std::size_t L = ds.config.L;
    const std::string tag_l = "L" + std::to_string(L);
    AblationReport rep;
    for (std::uint64_t seed : seeds) {
        rep.results.push_back({"identity", seed, patch_mse(test.inputs, test.targets), 0});
        std::vector<std::pair<std::size_t, std::string>> pre_levels{{L, tag_l}};
        if (L != 1 && cfg.ablate_levels) pre_levels.push_back({1, "L1"});
        for (const auto& [levels, tag] : pre_levels) {
            TrainConfig pc = cfg.pretrain;
            pc.seed = seed;
            pc.checkpoint_dir.clear();
            pc.progress = nullptr;
            const Dataset<float> pre = pair_dataset(ds, "pretrain", levels);
            const Dataset<float> pre_val = pair_dataset(ds, "validation", levels);
            auto pretrained = pretrain(build_unet3d<float>(cfg.unet, seed), pre, pre_val.size() ? &pre_val : nullptr, pc);
            if (pretrained_out && levels == L) pretrained_out->push_back(pretrained.model);
            const Scored s = finetune_and_score(pretrained.model, ft, test, cfg, seed);
            rep.results.push_back({"pretrain_" + tag, seed, s.mse, s.sigma2});
            if (cfg.progress) *cfg.progress << "seed " << seed << " pretrain_" << tag << " test mse " << s.mse << std::endl;
        }
        const Scored s = finetune_and_score(build_unet3d<float>(cfg.unet, mix(seed, 99)), ft, test, cfg, seed);
        for (const auto& [levels, tag] : pre_levels) rep.results.push_back({"no_pretrain_" + tag, seed, s.mse, s.sigma2});
        if (cfg.progress) {
            *cfg.progress << "seed " << seed << " no_pretrain test mse " << s.mse << " identity "
                          << rep.median("identity") << std::endl;
        }
    }
    return rep;
}

json RobustnessReport::to_json() const {
    json sw = json::array(), sp = json::array();
    for (const auto& e : sweep)
        sw.push_back({{"sigma2", e.sigma2}, {"test_mse", e.test_mse}, {"deterministic", e.deterministic}});
    for (const auto& e : splits)
        sp.push_back({{"split", e.split}, {"dsr_mse", e.dsr_mse}, {"identity_mse", e.identity_mse}});
    return {{"sigma2_sweep", sw}, {"splits", sp}};
}

RobustnessReport robustness_suite(const SynthDataset& ds, const ModelParams<float>& pretrained,
                                  const PipelineConfig& cfg, std::uint64_t seed) {
    RobustnessReport rep;
    const Dataset<float> ft = target_dataset(ds, "finetune");
    const Dataset<float> test = target_dataset(ds, "test");
    for (double s2 : kSigma2Sweep) {
        TrainConfig tc = cfg.finetune;
        tc.seed = seed;
        tc.sigma2 = s2;
        tc.noise_diag.clear();
        tc.checkpoint_dir.clear();
        tc.progress = nullptr;
        const auto res = finetune_lpft(pretrained, ft, nullptr, tc);
        PredictSpec ps = cfg.predict;
        ps.sigma2 = s2;
        ps.seed = mix(seed, 1);
        const Tensor<float> a = predict_rows(res.model, test, ps);
        ps.seed = mix(seed, 2);
        const Tensor<float> b = predict_rows(res.model, test, ps);
        rep.sweep.push_back({s2, patch_mse(a, test.targets), a == b});
        if (cfg.progress) *cfg.progress << "sigma2 " << s2 << " test mse " << rep.sweep.back().test_mse << std::endl;
    }

    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < ds.targets.size(); ++i) all.push_back(i);
    const auto [n_ft, n_test] =
        [&] {
            const std::size_t f = ds.count("finetune"), t = ds.count("test");
            return std::pair<std::size_t, std::size_t>{f, t};
        }();
    for (std::size_t k = 0; k < cfg.splits; ++k) {
        std::vector<std::size_t> order = all;
        std::mt19937_64 rng(mix(seed, 1000 + k));
        std::shuffle(order.begin(), order.end(), rng);
        const std::vector<std::size_t> ft_rows(order.begin(), order.begin() + n_ft);
        const std::vector<std::size_t> test_rows(order.begin() + n_ft, order.begin() + n_ft + n_test);
        const Dataset<float> f = target_dataset(ds.targets, ft_rows);
        const Dataset<float> t = target_dataset(ds.targets, test_rows);
        PipelineConfig c = cfg;
        c.tune_sigma2 = false;
        const Scored s = finetune_and_score(pretrained, f, t, c, mix(seed, 2000 + k));
        rep.splits.push_back({k, s.mse, patch_mse(t.inputs, t.targets)});
        if (cfg.progress) *cfg.progress << "split " << k << " dsr " << s.mse << " identity " << rep.splits.back().identity_mse << std::endl;
    }
    return rep;
}

}  // namespace dsr
