#pragma once

// Synthetic super-resolution pipeline: clean "CFD-like" tubes for
// pre-training, a different vessel whose degraded "4DF-like" measurements
// are fine-tuned on and tested, plus the robustness and ablation protocols.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsr/geomdata.hpp"
#include "dsr/json_util.hpp"
#include "dsr/netzoo.hpp"
#include "dsr/predictor.hpp"
#include "dsr/trainer.hpp"

namespace dsr {

struct DataConfig {
    std::size_t T = 4;
    std::size_t L = 4;
    std::size_t input_level = 2;  // resolution level of the degraded measurements
    double point_spacing = 0.25;  // mm
    double u_max = 1.0;           // m/s
    double sigma_v = 0.05;        // m/s
    BiasField bias;
    double epsilon = 0;           // 0 = calibrate on the pre-training clouds
    double patch_spacing = 1.0;   // FPS spacing as a multiple of epsilon
    bool rotate_pretrain = true;  // random rigid rotation of every pre-training patch
    std::size_t pretrain_pairs = 1000;
    std::size_t validation_pairs = 200;
    std::size_t finetune_patches = 15;
    std::size_t test_patches = 84;
    std::vector<TubeGeometry> pretrain_geometries{
        {GeometryKind::straight_tube, 2.0, 20.0, 0, 0},
        {GeometryKind::torus_segment, 2.0, 0, 8.0, 1.5707963267948966}};
    TubeGeometry target_geometry{GeometryKind::torus_segment, 2.0, 0, 12.0, 3.141592653589793};

    void validate() const;
};

DataConfig data_config_from_json(const json& j, DataConfig base = {});
json data_config_to_json(const DataConfig& c);

struct TargetPatch {
    NeighborhoodPatch patch;
    VoxelGrid grid;            // 2^T grid on the patch box
    Tensor<double> input;      // degraded field at input_level, pre-upsampled
    Tensor<double> target;     // clean field at level 0
    std::string split;         // "finetune" or "test"
};

struct SynthDataset {
    DataConfig config;
    double epsilon = 0;
    std::vector<VelocityPointCloud> pretrain_clouds;
    VelocityPointCloud target_clean, target_degraded;
    std::vector<PatchPair> pairs;           // pre-training pyramid pairs, levels 1..L
    std::vector<std::string> pair_split;    // "pretrain" or "validation"
    std::vector<std::size_t> pair_patch;    // source patch id of each pair
    std::vector<TargetPatch> targets;

    std::size_t count(const std::string& split) const;
};

SynthDataset build_synthetic(const DataConfig& cfg, std::uint64_t seed);

/// Pairs of a split, optionally limited to pyramid levels <= max_level.
Dataset<float> pair_dataset(const SynthDataset& ds, const std::string& split, std::size_t max_level = 0);
/// Target patches of a split (inputs degraded, targets clean).
Dataset<float> target_dataset(const SynthDataset& ds, const std::string& split);
Dataset<float> target_dataset(const std::vector<TargetPatch>& patches, const std::vector<std::size_t>& rows);

/// Writes clouds (CSV), patch tensors (DSRT) with JSON sidecars and the manifest.
void write_synthetic(const SynthDataset& ds, const std::filesystem::path& dir);

struct ManifestRecord {
    std::string id;
    std::string input, target, sidecar;  // relative paths
    std::size_t level = 0;
    std::string split;
};

struct LoadedManifest {
    std::filesystem::path dir;
    json raw;
    std::vector<ManifestRecord> records;
};

LoadedManifest load_manifest(const std::filesystem::path& dir);
Dataset<float> manifest_dataset(const LoadedManifest& m, const std::string& split);

/// Mean over patches of the all-component voxel MSE.
double patch_mse(const Tensor<float>& pred, const Tensor<float>& target);
/// MC prediction for every row of data.inputs.
Tensor<float> predict_rows(const ModelParams<float>& model, const Dataset<float>& data, const PredictSpec& spec);
/// Grid search over kSigma2Sweep on `data`, scored by patch MSE.
double select_sigma2(const ModelParams<float>& model, const Dataset<float>& data, PredictSpec spec);

struct PipelineConfig {
    DataConfig data;
    UNet3dSpec unet;
    TrainConfig pretrain;
    TrainConfig finetune;
    PredictSpec predict;
    bool tune_sigma2 = true;
    bool ablate_levels = true;  // also pre-train on L = 1 pairs in the ablation
    std::size_t splits = 30;
    std::ostream* progress = nullptr;
};

struct VariantResult {
    std::string name;
    std::uint64_t seed = 0;
    double test_mse = 0;
    double sigma2 = 0;
};

struct AblationReport {
    std::vector<VariantResult> results;  // includes "identity" rows
    double median(const std::string& variant) const;
    json to_json() const;
};

/// Variants pretrain on/off x L in {1, L}: pre-training differs only in the
/// pyramid depth; without pre-training the L axis has no effect, so the two
/// "no pretrain" variants share one fine-tuning run. When `pretrained` is
/// given it receives the full-depth pre-trained model of every seed.
AblationReport ablation_suite(const SynthDataset& ds, const PipelineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                              std::vector<ModelParams<float>>* pretrained = nullptr);

struct SweepEntry {
    double sigma2 = 0;
    double test_mse = 0;
    bool deterministic = false;  // two prediction seeds gave identical output
};

struct SplitEntry {
    std::size_t split = 0;
    double dsr_mse = 0;
    double identity_mse = 0;
};

struct RobustnessReport {
    std::vector<SweepEntry> sweep;
    std::vector<SplitEntry> splits;
    json to_json() const;
};

/// (a) sigma^2 sweep at fine-tune and prediction time; (b) `cfg.splits`
/// random fine-tune/test re-partitions of the target patches.
RobustnessReport robustness_suite(const SynthDataset& ds, const ModelParams<float>& pretrained,
                                  const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace dsr
