#pragma once

#include <type_traits>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsr/energy.hpp"
#include "dsr/json_util.hpp"
#include "dsr/netzoo.hpp"

namespace dsr {

enum class LossKind { energy, mse };

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind kind);

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t epochs = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    std::size_t m = 2;
    double sigma2 = 0;
    // Per-input-component noise variances; overrides sigma2 when non-empty.
    std::vector<double> noise_diag;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::energy;
    // LP-FT schedule.
    std::size_t lp_epochs = 300;
    std::size_t ft_epochs = 200;
    // Written when non-empty.
    std::filesystem::path checkpoint_dir;
    std::ostream* progress = nullptr;

    void validate() const;
};

TrainConfig train_config_from_json(const json& j, TrainConfig base = {});
json train_config_to_json(const TrainConfig& c);

/// Rows along the leading axis: inputs [N, ...], targets [N, ...].
template <typename T>
struct Dataset {
    Tensor<T> inputs;
    Tensor<T> targets;

    std::size_t size() const { return inputs.empty() ? 0 : inputs.extent(0); }
    void validate() const;
};

template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Tensor<T>> m1, m2;
};

/// Bias-corrected Adam update; frozen parameters are skipped entirely.
template <typename T>
void adam_step(ModelParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr);

struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> val_loss;  // empty without validation data
    std::vector<std::string> phase;  // per epoch: "train", "lp" or "ft"
    double wall_seconds = 0;
    std::string checkpoint;
    std::uint64_t seed = 0;

    std::size_t epochs() const { return train_loss.size(); }
    json to_json() const;
};

template <typename T>
struct TrainResult {
    ModelParams<T> model;
    TrainReport report;
};

/// Draws fresh noise per epoch and sample, evaluates the model on the m
/// noised copies of every input and minimizes the configured loss.
template <typename T>
TrainResult<T> pretrain(ModelParams<T> model, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                        const TrainConfig& config);

/// Replaces the final layer, trains it alone for lp_epochs, then unfreezes
/// everything for ft_epochs more.
template <typename T>
TrainResult<T> finetune_lpft(const ModelParams<T>& pretrained, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                             const TrainConfig& config);

/// Same loop with the MSE loss, one replicate and no input noise.
template <typename T>
TrainResult<T> train_l2_baseline(ModelParams<T> model, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                                 TrainConfig config);

/// Loss of the model on a dataset with noise drawn from `seed`.
template <typename T>
LossValue evaluate_loss(const ModelParams<T>& model, const Dataset<T>& data, const TrainConfig& config,
                        std::uint64_t seed);

}  // namespace dsr
