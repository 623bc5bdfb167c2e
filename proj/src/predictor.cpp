#include "dsr/predictor.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace dsr {

void PredictSpec::validate() const {
    if (J < 1) throw ConfigError("predict.J must be >= 1");
    if (sigma2 < 0) throw ConfigError("predict.sigma2 must be >= 0");
    for (double v : noise_diag)
        if (v < 0) throw ConfigError("predict.noise_diag entries must be >= 0");
}

bool PredictSpec::deterministic() const {
    if (noise_diag.empty()) return sigma2 == 0;
    for (double v : noise_diag)
        if (v > 0) return false;
    return true;
}

PredictSpec predict_spec_from_json(const json& j, PredictSpec s) {
    const std::string where = "predict";
    reject_unknown_keys(j, {"J", "sigma2", "seed"}, where);
    read_opt(j, "J", s.J, where);
    read_opt(j, "sigma2", s.sigma2, where);
    read_opt(j, "seed", s.seed, where);
    s.validate();
    return s;
}

json predict_spec_to_json(const PredictSpec& s) { return {{"J", s.J}, {"sigma2", s.sigma2}, {"seed", s.seed}}; }

template <typename T>
Tensor<T> mc_upsample(const ModelParams<T>& model, const Tensor<T>& input, const PredictSpec& spec) {
    spec.validate();
    const bool unbatched = input.rank() == (model.is_mlp() ? 1u : 4u);
    Tensor<T> batch = input;
    if (unbatched) {
        Shape s = input.shape();
        s.insert(s.begin(), 1);
        batch = std::move(batch).reshaped(std::move(s));
    }
    if (spec.deterministic()) {
        Tensor<T> out = forward(model, batch);
        return unbatched ? std::move(out).reshaped(row_shape(out.shape())) : out;
    }

    const std::size_t unit = batch.size();
    const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(spec.J, (std::size_t{1} << 16) / unit));
    std::vector<double> sd;
    if (spec.noise_diag.empty()) {
        sd.assign(1, std::sqrt(spec.sigma2));
    } else {
        if (unit % spec.noise_diag.size() != 0) {
            throw DimensionError("mc_upsample: noise_diag has " + std::to_string(spec.noise_diag.size()) +
                                 " entries, which does not divide the input size " + std::to_string(unit));
        }
        for (double v : spec.noise_diag) sd.push_back(std::sqrt(v));
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> acc;
    Shape out_unit;
    for (std::size_t j0 = 0; j0 < spec.J; j0 += chunk) {
        const std::size_t len = std::min(chunk, spec.J - j0);
        Shape s = batch.shape();
        s[0] *= len;
        Tensor<T> noisy(s);
        for (std::size_t j = 0; j < len; ++j)
            for (std::size_t i = 0; i < unit; ++i) noisy[j * unit + i] = static_cast<T>(batch[i] + sd[i % sd.size()] * z(rng));
        Tensor<T> out;
        try {
            out = forward(model, noisy);
        } catch (const NumericError& e) {
            throw NumericError("mc_upsample: non-finite output in samples " + std::to_string(j0) + ".." +
                               std::to_string(j0 + len - 1) + ": " + e.what());
        }
        const std::size_t per = out.size() / len;
        if (acc.empty()) {
            acc.assign(per, 0.0);
            out_unit = out.shape();
            out_unit[0] /= len;
        }
        for (std::size_t j = 0; j < len; ++j) {
            for (std::size_t i = 0; i < per; ++i) {
                const T v = out[j * per + i];
                if (!std::isfinite(static_cast<double>(v))) {
                    throw NumericError("mc_upsample: non-finite output in sample " + std::to_string(j0 + j));
                }
                acc[i] += v;
            }
        }
    }
    Tensor<T> mean(out_unit);
    for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<T>(acc[i] / static_cast<double>(spec.J));
    return unbatched ? std::move(mean).reshaped(row_shape(out_unit)) : mean;
}

ReconstructedField reconstruct_shape(const std::vector<PredictedPatch>& patches, const std::vector<Vec3>& points) {
    ReconstructedField field;
    field.velocities.assign(points.size(), Vec3{0, 0, 0});
    field.counts.assign(points.size(), 0);
    for (const auto& patch : patches) {
        const std::size_t S = patch.grid.extent();
        const std::size_t cells = S * S * S;
        if (patch.values.shape() != Shape{3, S, S, S}) {
            throw DimensionError("reconstruct_shape: patch values " + shape_str(patch.values.shape()) +
                                 " do not match a " + std::to_string(S) + "^3 grid");
        }
        const Box& box = patch.grid.box;
        for (std::size_t p = 0; p < points.size(); ++p) {
            const Vec3& q = points[p];
            if (!box.contains(q)) continue;
            // Cells are equal-sized, so the nearest centroid is the cell holding q.
            std::size_t idx[3];
            for (int a = 0; a < 3; ++a) {
                const double u = (q[a] - box.lo[a]) / (box.hi[a] - box.lo[a]) * static_cast<double>(S);
                idx[a] = std::min(S - 1, static_cast<std::size_t>(std::max(0.0, std::floor(u))));
            }
            const std::size_t c = (idx[0] * S + idx[1]) * S + idx[2];
            for (int a = 0; a < 3; ++a) field.velocities[p][a] += patch.values[a * cells + c];
            ++field.counts[p];
        }
    }
    for (std::size_t p = 0; p < points.size(); ++p) {
        if (field.counts[p] == 0) {
            const Vec3& q = points[p];
            throw CoverageError("reconstruct_shape: point " + std::to_string(p) + " (" + std::to_string(q[0]) + ", " +
                                std::to_string(q[1]) + ", " + std::to_string(q[2]) + ") is not covered by any patch");
        }
        for (int a = 0; a < 3; ++a) field.velocities[p][a] /= static_cast<double>(field.counts[p]);
    }
    return field;
}

json Metrics::to_json() const {
    return {{"mse_x", mse_x}, {"mse_y", mse_y}, {"mse_z", mse_z}, {"mse_magnitude", mse_magnitude}, {"mse", mse}};
}

Metrics evaluate(const std::vector<Vec3>& pred, const std::vector<Vec3>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw DimensionError("evaluate: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " reference points");
    }
    double comp[3] = {0, 0, 0}, mag = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double np = 0, nt = 0;
        for (int a = 0; a < 3; ++a) {
            const double d = pred[i][a] - truth[i][a];
            comp[a] += d * d;
            np += pred[i][a] * pred[i][a];
            nt += truth[i][a] * truth[i][a];
        }
        const double dm = std::sqrt(np) - std::sqrt(nt);
        mag += dm * dm;
    }
    const double n = static_cast<double>(pred.size());
    Metrics m;
    m.mse_x = comp[0] / n;
    m.mse_y = comp[1] / n;
    m.mse_z = comp[2] / n;
    m.mse_magnitude = mag / n;
    m.mse = (comp[0] + comp[1] + comp[2]) / (3.0 * n);
    return m;
}

Metrics evaluate(const Tensor<double>& pred, const Tensor<double>& truth) {
    if (pred.shape() != truth.shape()) {
        throw DimensionError("evaluate: prediction " + shape_str(pred.shape()) + " vs truth " + shape_str(truth.shape()));
    }
    const Shape& s = pred.shape();
    const std::size_t off = s.size() == 5 ? 1 : 0;
    if ((s.size() != 4 && s.size() != 5) || s[off] != 3) {
        throw DimensionError("evaluate: expected [3,S,S,S] or [N,3,S,S,S] fields, got " + shape_str(s));
    }
    const std::size_t batch = off ? s[0] : 1;
    const std::size_t cells = pred.size() / (3 * batch);
    std::vector<Vec3> p, t;
    p.reserve(batch * cells);
    t.reserve(batch * cells);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < cells; ++c) {
            const std::size_t base = b * 3 * cells + c;
            p.push_back({pred[base], pred[base + cells], pred[base + 2 * cells]});
            t.push_back({truth[base], truth[base + cells], truth[base + 2 * cells]});
        }
    return evaluate(p, t);
}

template Tensor<float> mc_upsample<float>(const ModelParams<float>&, const Tensor<float>&, const PredictSpec&);
template Tensor<double> mc_upsample<double>(const ModelParams<double>&, const Tensor<double>&, const PredictSpec&);

}  // namespace dsr
