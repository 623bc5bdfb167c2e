#include "dsr/netzoo.hpp"

#include <cmath>
#include <random>

#include "dsr/json_util.hpp"
#include "dsr/tensor_io.hpp"

namespace dsr {
namespace {

constexpr std::uint64_t kFinalLayerStream = 0x66696e616cULL;

template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void add_dense(std::vector<Parameter<T>>& out, const std::string& name, std::size_t in, std::size_t k,
               std::mt19937_64& rng) {
    Parameter<T> w{name + ".weight", Tensor<T>({in, k}), true};
    Parameter<T> b{name + ".bias", Tensor<T>({k}), true};
    init_uniform(w.value, in, rng);
    init_uniform(b.value, in, rng);
    out.push_back(std::move(w));
    out.push_back(std::move(b));
}

template <typename T>
void add_conv(std::vector<Parameter<T>>& out, const std::string& name, std::size_t cin, std::size_t cout,
              std::size_t k, std::mt19937_64& rng) {
    Parameter<T> w{name + ".weight", Tensor<T>({cout, cin, k, k, k}), true};
    Parameter<T> b{name + ".bias", Tensor<T>({cout}), true};
    const std::size_t fan_in = cin * k * k * k;
    init_uniform(w.value, fan_in, rng);
    init_uniform(b.value, fan_in, rng);
    out.push_back(std::move(w));
    out.push_back(std::move(b));
}

void validate_unet(const UNet3dSpec& s) {
    if (s.channels < 1 || s.base_channels < 1) throw ConfigError("unet3d: channel counts must be positive");
    if (s.kernel % 2 == 0) throw ConfigError("unet3d: kernel size must be odd");
    if (s.depth > s.patch_exponent) {
        throw ConfigError("unet3d: patch extent 2^" + std::to_string(s.patch_exponent) + " is not divisible by 2^" +
                          std::to_string(s.depth) + " (depth)");
    }
}

std::string level(const char* prefix, std::size_t l) { return std::string(prefix) + std::to_string(l); }

// Walks the parameter list in construction order.
template <typename T>
struct Cursor {
    std::span<const Var<T>> vars;
    std::size_t pos = 0;
    Var<T> next() {
        if (pos >= vars.size()) throw UsageError("forward: bound parameter list too short");
        return vars[pos++];
    }
};

template <typename T>
Var<T> mlp_forward(const MlpSpec& spec, Cursor<T>& cur, Var<T> x) {
    if (x.shape().size() == 1) x = ad::reshape(x, {1, x.shape()[0]});
    if (x.shape().size() != 2 || x.shape()[1] != spec.input_dim) {
        throw DimensionError("mlp forward: expected [B," + std::to_string(spec.input_dim) + "] input, got " +
                             shape_str(x.shape()));
    }
    auto w = cur.next();
    auto b = cur.next();
    Var<T> h = ad::affine(x, w, b);
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        w = cur.next();
        b = cur.next();
        h = ad::activation(ad::affine(h, w, b), spec.activation);
    }
    w = cur.next();
    b = cur.next();
    return ad::affine(h, w, b);
}

template <typename T>
Var<T> conv_act(Cursor<T>& cur, const Var<T>& x, Activation act) {
    auto w = cur.next();
    auto b = cur.next();
    return ad::activation(ad::conv3d(x, w, b), act);
}

template <typename T>
Var<T> unet_forward(const UNet3dSpec& spec, Cursor<T>& cur, Var<T> x) {
    const bool unbatched = x.shape().size() == 4;
    if (unbatched) {
        Shape s = x.shape();
        s.insert(s.begin(), 1);
        x = ad::reshape(x, s);
    }
    const std::size_t S = spec.extent();
    const Shape& xs = x.shape();
    if (xs.size() != 5 || xs[1] != spec.channels || xs[2] != S || xs[3] != S || xs[4] != S) {
        throw DimensionError("unet3d forward: expected [B," + std::to_string(spec.channels) + "," + std::to_string(S) +
                             "," + std::to_string(S) + "," + std::to_string(S) + "] input, got " + shape_str(xs));
    }
    const Activation act = Activation::leaky_relu(spec.leaky_alpha);
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (std::size_t l = 0; l < spec.depth; ++l) {
        h = conv_act(cur, h, act);
        h = conv_act(cur, h, act);
        skips.push_back(h);
        h = ad::avg_pool3d(h, 2);
    }
    h = conv_act(cur, h, act);
    h = conv_act(cur, h, act);
    for (std::size_t l = spec.depth; l-- > 0;) {
        h = ad::nearest_upsample3d(h, 2);
        h = conv_act(cur, h, act);
        h = ad::concat_channels(skips[l], h);
        h = conv_act(cur, h, act);
        h = conv_act(cur, h, act);
    }
    auto w = cur.next();
    auto b = cur.next();
    Var<T> out = ad::conv3d(h, w, b);
    if (spec.residual) out = ad::add(out, x);
    if (unbatched) out = ad::reshape(out, row_shape(out.shape()));
    return out;
}

}  // namespace

template <typename T>
std::size_t ModelParams<T>::count() const {
    std::size_t c = 0;
    for (const auto& p : params) c += p.value.size();
    return c;
}

template <typename T>
std::size_t ModelParams<T>::trainable_tensors() const {
    std::size_t c = 0;
    for (const auto& p : params) c += p.trainable ? 1 : 0;
    return c;
}

template <typename T>
const Parameter<T>& ModelParams<T>::get(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
Parameter<T>& ModelParams<T>::get(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
std::vector<std::string> ModelParams<T>::final_layer_names() const {
    const std::string prefix = is_mlp() ? "head" : "final";
    return {prefix + ".weight", prefix + ".bias"};
}

template <typename T>
ModelParams<T> build_mlp(const MlpSpec& spec, std::uint64_t seed) {
    if (spec.input_dim < 1) throw ConfigError("mlp: input_dim must be >= 1");
    ModelParams<T> out;
    out.arch = spec;
    out.seed = seed;
    std::mt19937_64 rng(seed);
    add_dense(out.params, "embed", spec.input_dim, 1, rng);
    std::size_t width = 1;
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        if (spec.hidden[l] < 1) throw ConfigError("mlp: hidden widths must be positive");
        add_dense(out.params, level("hidden", l), width, spec.hidden[l], rng);
        width = spec.hidden[l];
    }
    add_dense(out.params, "head", width, 1, rng);
    return out;
}

template <typename T>
ModelParams<T> build_unet3d(const UNet3dSpec& spec, std::uint64_t seed) {
    validate_unet(spec);
    ModelParams<T> out;
    out.arch = spec;
    out.seed = seed;
    std::mt19937_64 rng(seed);
    const std::size_t k = spec.kernel;
    std::size_t cin = spec.channels;
    for (std::size_t l = 0; l < spec.depth; ++l) {
        const std::size_t c = spec.base_channels << l;
        add_conv(out.params, level("enc", l) + ".conv1", cin, c, k, rng);
        add_conv(out.params, level("enc", l) + ".conv2", c, c, k, rng);
        cin = c;
    }
    const std::size_t cb = spec.base_channels << spec.depth;
    add_conv(out.params, "bottom.conv1", cin, cb, k, rng);
    add_conv(out.params, "bottom.conv2", cb, cb, k, rng);
    cin = cb;
    for (std::size_t l = spec.depth; l-- > 0;) {
        const std::size_t c = spec.base_channels << l;
        add_conv(out.params, level("dec", l) + ".up", cin, c, k, rng);
        add_conv(out.params, level("dec", l) + ".conv1", 2 * c, c, k, rng);
        add_conv(out.params, level("dec", l) + ".conv2", c, c, k, rng);
        cin = c;
    }
    add_conv(out.params, "final", cin, spec.channels, 1, rng);
    return out;
}

template <typename T>
std::vector<Var<T>> bind(const ModelParams<T>& params, Graph<T>& graph) {
    std::vector<Var<T>> vars;
    vars.reserve(params.params.size());
    for (const auto& p : params.params) vars.push_back(p.trainable ? graph.parameter(p.value) : graph.constant(p.value));
    return vars;
}

template <typename T>
Var<T> forward(const ModelParams<T>& params, std::span<const Var<T>> bound, const Var<T>& input) {
    if (bound.size() != params.params.size()) throw UsageError("forward: bound parameter count mismatch");
    Cursor<T> cur{bound};
    Var<T> out = std::visit(
        [&](const auto& spec) -> Var<T> {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, MlpSpec>) {
                return mlp_forward(spec, cur, input);
            } else {
                return unet_forward(spec, cur, input);
            }
        },
        params.arch);
    if (cur.pos != bound.size()) throw UsageError("forward: unused bound parameters");
    return out;
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const Tensor<T>& input) {
    Graph<T> g;
    std::vector<Var<T>> vars;
    vars.reserve(params.params.size());
    for (const auto& p : params.params) vars.push_back(g.constant(p.value));
    Var<T> x = g.constant(input);
    return forward(params, std::span<const Var<T>>(vars), x).value();
}

template <typename T>
ModelParams<T> replace_final_layer(ModelParams<T> params, std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(kFinalLayerStream)};
    std::mt19937_64 rng(seq);
    const auto names = params.final_layer_names();
    Parameter<T>& w = params.get(names[0]);
    Parameter<T>& b = params.get(names[1]);
    // Dense weights are [in, k]; 1x1x1 conv kernels are [out, in, 1, 1, 1].
    const std::size_t fan_in = params.is_mlp() ? w.value.extent(0) : w.value.extent(1);
    init_uniform(w.value, fan_in, rng);
    init_uniform(b.value, fan_in, rng);
    return set_trainable(std::move(params), TrainablePolicy::final_only);
}

template <typename T>
ModelParams<T> set_trainable(ModelParams<T> params, TrainablePolicy policy) {
    const auto names = params.final_layer_names();
    for (auto& p : params.params) {
        p.trainable = policy == TrainablePolicy::all || p.name == names[0] || p.name == names[1];
    }
    return params;
}

template <typename T>
std::vector<double> extract_beta(const ModelParams<T>& params) {
    if (!params.is_mlp()) throw UsageError("extract_beta needs an MLP model");
    const Tensor<T>& w = params.get("embed.weight").value;
    const double w1 = w[0];
    if (std::abs(w1) < 1e-12) throw DegenerateDirectionError("extract_beta: first-layer weight w1 is ~0");
    std::vector<double> beta(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) beta[i] = static_cast<double>(w[i]) / w1;
    return beta;
}

json arch_to_json(const ArchSpec& arch) {
    return std::visit(
        [](const auto& spec) -> json {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, MlpSpec>) {
                return {{"input_dim", spec.input_dim},
                        {"hidden", spec.hidden},
                        {"activation", spec.activation.name()},
                        {"alpha", spec.activation.alpha}};
            } else {
                return {{"channels", spec.channels},         {"patch_exponent", spec.patch_exponent},
                        {"depth", spec.depth},               {"base_channels", spec.base_channels},
                        {"kernel", spec.kernel},             {"leaky_alpha", spec.leaky_alpha},
                        {"residual", spec.residual}};
            }
        },
        arch);
}

MlpSpec mlp_spec_from_json(const json& j) {
    const std::string where = "model.mlp";
    reject_unknown_keys(j, {"input_dim", "hidden", "activation", "alpha"}, where);
    MlpSpec s;
    read_opt(j, "input_dim", s.input_dim, where);
    read_opt(j, "hidden", s.hidden, where);
    std::string act = s.activation.name();
    double alpha = s.activation.alpha;
    read_opt(j, "activation", act, where);
    read_opt(j, "alpha", alpha, where);
    s.activation = Activation::parse(act, alpha);
    return s;
}

UNet3dSpec unet_spec_from_json(const json& j) {
    const std::string where = "model.unet3d";
    reject_unknown_keys(j, {"channels", "patch_exponent", "depth", "base_channels", "kernel", "leaky_alpha", "residual"},
                        where);
    UNet3dSpec s;
    read_opt(j, "channels", s.channels, where);
    read_opt(j, "patch_exponent", s.patch_exponent, where);
    read_opt(j, "depth", s.depth, where);
    read_opt(j, "base_channels", s.base_channels, where);
    read_opt(j, "kernel", s.kernel, where);
    read_opt(j, "leaky_alpha", s.leaky_alpha, where);
    read_opt(j, "residual", s.residual, where);
    return s;
}

ArchSpec arch_from_json(const std::string& tag, const json& j) {
    if (tag == "mlp") return mlp_spec_from_json(j);
    if (tag == "unet3d") return unet_spec_from_json(j);
    throw ConfigError("unknown architecture tag '" + tag + "'");
}

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["architecture"] = params.arch_tag();
    manifest["spec"] = arch_to_json(params.arch);
    manifest["seed"] = params.seed;
    manifest["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
    json list = json::array();
    for (const auto& p : params.params) {
        const std::string file = p.name + ".dsrt";
        write_dsrt(dir / file, p.value);
        list.push_back({{"name", p.name}, {"file", file}, {"trainable", p.trainable}, {"shape", p.value.shape()}});
    }
    manifest["parameters"] = list;
    write_json_file(dir / "manifest.json", manifest);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw MissingArtifactError(manifest_path.string());
    const json m = read_json_file(manifest_path);
    ModelParams<T> out;
    try {
        out.arch = arch_from_json(m.at("architecture").get<std::string>(), m.at("spec"));
        out.seed = m.at("seed").get<std::uint64_t>();
        // Rebuild to recover the canonical parameter order, then overwrite.
        ModelParams<T> fresh = out.is_mlp() ? build_mlp<T>(std::get<MlpSpec>(out.arch), out.seed)
                                            : build_unet3d<T>(std::get<UNet3dSpec>(out.arch), out.seed);
        const json& list = m.at("parameters");
        if (list.size() != fresh.params.size()) throw ConfigError("checkpoint parameter count mismatch");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string name = list[i].at("name").get<std::string>();
            if (name != fresh.params[i].name) throw ConfigError("checkpoint parameter order mismatch at " + name);
            const auto file = dir / list[i].at("file").get<std::string>();
            if (!std::filesystem::exists(file)) throw MissingArtifactError(file.string());
            Tensor<T> value = read_dsrt<T>(file);
            if (value.shape() != fresh.params[i].value.shape()) {
                throw DimensionError("checkpoint tensor " + name + " has shape " + shape_str(value.shape()));
            }
            fresh.params[i].value = std::move(value);
            fresh.params[i].trainable = list[i].at("trainable").get<bool>();
        }
        out.params = std::move(fresh.params);
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    return out;
}

#define DSR_INSTANTIATE(T)                                                                          \
    template struct ModelParams<T>;                                                                 \
    template ModelParams<T> build_mlp<T>(const MlpSpec&, std::uint64_t);                            \
    template ModelParams<T> build_unet3d<T>(const UNet3dSpec&, std::uint64_t);                      \
    template std::vector<Var<T>> bind<T>(const ModelParams<T>&, Graph<T>&);                          \
    template Var<T> forward<T>(const ModelParams<T>&, std::span<const Var<T>>, const Var<T>&);      \
    template Tensor<T> forward<T>(const ModelParams<T>&, const Tensor<T>&);                         \
    template ModelParams<T> replace_final_layer<T>(ModelParams<T>, std::uint64_t);                  \
    template ModelParams<T> set_trainable<T>(ModelParams<T>, TrainablePolicy);                      \
    template std::vector<double> extract_beta<T>(const ModelParams<T>&);                            \
    template void save_checkpoint<T>(const ModelParams<T>&, const std::filesystem::path&);          \
    template ModelParams<T> load_checkpoint<T>(const std::filesystem::path&);

DSR_INSTANTIATE(float)
DSR_INSTANTIATE(double)

#undef DSR_INSTANTIATE

}  // namespace dsr
