#pragma once

#include <cstdint>
#include <vector>

#include "dsr/geomdata.hpp"
#include "dsr/json_util.hpp"
#include "dsr/netzoo.hpp"

namespace dsr {

struct PredictSpec {
    std::size_t J = 100;
    double sigma2 = 0;
    // Per-component variances of one input row (e.g. a diagonal covariance
    // for MLP inputs); overrides sigma2 when non-empty.
    std::vector<double> noise_diag;
    std::uint64_t seed = 0;

    bool deterministic() const;

    void validate() const;
};

PredictSpec predict_spec_from_json(const json& j, PredictSpec base = {});
json predict_spec_to_json(const PredictSpec& s);

/// The sigma^2 values searched when selecting the prediction noise level.
inline const std::vector<double> kSigma2Sweep{0.0, 0.001, 0.01, 0.05};

/// (1/J) sum_j h(x + eps_j). With sigma2 = 0 a single forward pass is
/// returned for every J. `input` is one sample (no batch axis) or a batch.
template <typename T>
Tensor<T> mc_upsample(const ModelParams<T>& model, const Tensor<T>& input, const PredictSpec& spec);

/// A predicted patch with the centroid grid it lives on.
struct PredictedPatch {
    VoxelGrid grid;
    Tensor<double> values;  // [3, S, S, S]
};

struct ReconstructedField {
    std::vector<Vec3> velocities;
    std::vector<std::size_t> counts;
};

/// Patches covering a point are those whose grid box contains it; each
/// contributes the value at its nearest centroid, averaged with equal weights.
ReconstructedField reconstruct_shape(const std::vector<PredictedPatch>& patches, const std::vector<Vec3>& points);

struct Metrics {
    double mse_x = 0, mse_y = 0, mse_z = 0;
    double mse_magnitude = 0;
    double mse = 0;  // over all components

    json to_json() const;
};

/// Per-point velocity triples.
Metrics evaluate(const std::vector<Vec3>& pred, const std::vector<Vec3>& truth);
/// [3, S, S, S] fields (or [N, 3, S, S, S]); voxels play the role of points.
Metrics evaluate(const Tensor<double>& pred, const Tensor<double>& truth);

}  // namespace dsr
