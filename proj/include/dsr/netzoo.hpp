#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/autodiff.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

/// x -> embed (d -> 1, linear, no activation) -> hidden layers -> head (-> 1).
/// The embed layer plays the role of the projection direction beta.
struct MlpSpec {
    std::size_t input_dim = 3;
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::leaky_relu(0.01);
};

/// 3-D U-Net over [3, S, S, S] patches, S = 2^patch_exponent.
/// Encoder: two convs per level then 2x average pooling (depth times).
/// Decoder: nearest upsample + conv, channel concat with the skip, two convs.
/// Final layer: 1x1x1 conv to 3 channels, optionally added to the input.
struct UNet3dSpec {
    std::size_t channels = 3;
    std::size_t patch_exponent = 4;
    std::size_t depth = 3;
    std::size_t base_channels = 16;
    std::size_t kernel = 3;
    double leaky_alpha = 0.01;
    bool residual = true;

    std::size_t extent() const { return std::size_t{1} << patch_exponent; }
};

using ArchSpec = std::variant<MlpSpec, UNet3dSpec>;

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

enum class TrainablePolicy { final_only, all };

template <typename T>
struct ModelParams {
    ArchSpec arch;
    std::uint64_t seed = 0;
    std::vector<Parameter<T>> params;

    bool is_mlp() const { return std::holds_alternative<MlpSpec>(arch); }
    std::string arch_tag() const { return is_mlp() ? "mlp" : "unet3d"; }
    std::size_t count() const;
    std::size_t trainable_tensors() const;
    const Parameter<T>& get(const std::string& name) const;
    Parameter<T>& get(const std::string& name);
    // Names of the designated final layer (weight, bias).
    std::vector<std::string> final_layer_names() const;
};

template <typename T>
ModelParams<T> build_mlp(const MlpSpec& spec, std::uint64_t seed);

template <typename T>
ModelParams<T> build_unet3d(const UNet3dSpec& spec, std::uint64_t seed);

/// Registers parameters in `graph`: trainable ones as differentiable leaves,
/// frozen ones as constants. Order matches params.params.
template <typename T>
std::vector<Var<T>> bind(const ModelParams<T>& params, Graph<T>& graph);

/// MLP input [B, d] -> [B, 1]; U-Net input [B, 3, S, S, S] (or unbatched) -> same shape.
template <typename T>
Var<T> forward(const ModelParams<T>& params, std::span<const Var<T>> bound, const Var<T>& input);

/// Inference without gradients.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const Tensor<T>& input);

/// Reinitializes the final layer from `seed`; everything else is untouched
/// and only the final layer is left trainable.
template <typename T>
ModelParams<T> replace_final_layer(ModelParams<T> params, std::uint64_t seed);

template <typename T>
ModelParams<T> set_trainable(ModelParams<T> params, TrainablePolicy policy);

/// First-layer direction normalized so its first entry is 1.
template <typename T>
std::vector<double> extract_beta(const ModelParams<T>& params);

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& dir);

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& dir);

nlohmann::json arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const std::string& tag, const nlohmann::json& j);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);
UNet3dSpec unet_spec_from_json(const nlohmann::json& j);

}  // namespace dsr
