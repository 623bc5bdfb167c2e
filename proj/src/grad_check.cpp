#include "dsr/grad_check.hpp"

#include <array>
#include <random>

#include "dsr/energy.hpp"
#include "dsr/netzoo.hpp"

namespace dsr {
namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

template <typename T>
Tensor<T> as(const Tensor<double>& t) {
    return t.template cast<T>();
}

template <typename T>
std::vector<Tensor<T>> values_of(const ModelParams<T>& m) {
    std::vector<Tensor<T>> out;
    for (const auto& p : m.params) out.push_back(p.value);
    return out;
}

GradCheckCase affine_chain(std::uint64_t seed, bool flip) {
    std::mt19937_64 rng(seed);
    const Tensor<double> x = random_tensor({5, 4}, rng);
    const Tensor<double> y = random_tensor({5, 2}, rng);
    std::vector<Tensor<double>> params{random_tensor({4, 3}, rng, 0.5), random_tensor({3}, rng, 0.1),
                                       random_tensor({3, 2}, rng, 0.5), random_tensor({2}, rng, 0.1)};
    auto loss = [&](auto& g, auto p) {
        using U = typename std::decay_t<decltype(g)>::value_type;
        auto h = ad::activation(ad::affine(g.constant(as<U>(x)), p[0], p[1]), Activation::softplus());
        return ad::mse_loss(ad::affine(h, p[2], p[3]), as<U>(y));
    };
    GradCheckOptions opt;
    opt.seed = seed;
    opt.flip_sign = flip;
    return {"affine_chain+mse", "f64", 1e-6, grad_check<double>(loss, params, opt)};
}

GradCheckCase conv_stack(std::uint64_t seed, bool flip) {
    std::mt19937_64 rng(seed + 1);
    const Tensor<double> x = random_tensor({2, 2, 4, 4, 4}, rng);
    const Tensor<double> y = random_tensor({2, 2, 4, 4, 4}, rng);
    std::vector<Tensor<double>> params{random_tensor({3, 2, 3, 3, 3}, rng, 0.3), random_tensor({3}, rng, 0.1),
                                       random_tensor({2, 3, 1, 1, 1}, rng, 0.5), random_tensor({2}, rng, 0.1)};
    auto loss = [&](auto& g, auto p) {
        using U = typename std::decay_t<decltype(g)>::value_type;
        auto xin = g.constant(as<U>(x));
        auto h = ad::activation(ad::conv3d(xin, p[0], p[1]), Activation::softplus());
        h = ad::nearest_upsample3d(ad::avg_pool3d(h, 2), 2);
        auto out = ad::add(ad::conv3d(h, p[2], p[3]), xin);
        return ad::mse_loss(out, as<U>(y));
    };
    GradCheckOptions opt;
    opt.seed = seed;
    opt.flip_sign = flip;
    return {"conv3d+pool+upsample+mse", "f64", 1e-6, grad_check<double>(loss, params, opt)};
}

GradCheckCase mlp_energy(std::uint64_t seed, bool flip) {
    MlpSpec spec;
    spec.input_dim = 3;
    spec.activation = Activation::softplus();
    const auto model = build_mlp<double>(spec, seed);
    const auto model_f = build_mlp<float>(spec, seed);
    const std::size_t n = 8, m = 2;
    std::mt19937_64 rng(seed + 2);
    std::uniform_real_distribution<double> unif(0.0, 1.08);
    Tensor<double> x({n * m, 3}), y({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double proj = 0;
        std::array<double, 3> xi{unif(rng), unif(rng), unif(rng)};
        proj = xi[0] + 1.2 * xi[1] + 1.5 * xi[2];
        y[i] = proj * proj / 7.4;
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < 3; ++c) x[(i * m + j) * 3 + c] = xi[c] + std::normal_distribution<double>(0, 0.5)(rng);
    }
    auto loss = [&](auto& g, auto p) {
        using U = typename std::decay_t<decltype(g)>::value_type;
        const auto& mp = [&]() -> const auto& {
            if constexpr (std::is_same_v<U, double>) return model;
            else return model_f;
        }();
        auto out = forward(mp, p, g.constant(as<U>(x)));
        return ad::energy_loss(out, as<U>(y), m);
    };
    GradCheckOptions opt;
    opt.seed = seed;
    opt.probes = 64;
    opt.flip_sign = flip;
    return {"mlp+energy_scalar", "f64", 1e-6, grad_check<double>(loss, values_of(model), opt)};
}

GradCheckCase unet_energy(std::uint64_t seed, bool flip) {
    UNet3dSpec spec;  // 16^3, depth 3, base 16
    const auto model_f = build_unet3d<float>(spec, seed);
    const auto model_d = build_unet3d<double>(spec, seed);
    const std::size_t S = spec.extent(), m = 2;
    std::mt19937_64 rng(seed + 3);
    const Tensor<double> y = random_tensor({1, 3, S, S, S}, rng);
    Tensor<double> x({m, 3, S, S, S});
    std::normal_distribution<double> noise(0.0, 0.3);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < y.size(); ++i) x[j * y.size() + i] = y[i] + noise(rng);
    auto loss = [&](auto& g, auto p) {
        using U = typename std::decay_t<decltype(g)>::value_type;
        const auto& mp = [&]() -> const auto& {
            if constexpr (std::is_same_v<U, double>) return model_d;
            else return model_f;
        }();
        auto out = forward(mp, p, g.constant(as<U>(x)));
        return ad::energy_loss(out, as<U>(y), m);
    };
    GradCheckOptions opt;
    opt.seed = seed;
    opt.probes = 24;
    opt.step = 1e-5;
    opt.guard = 1e-5;
    opt.flip_sign = flip;
    return {"unet3d_16+energy_vector", "f32", 1e-3, grad_check<float>(loss, values_of(model_f), opt)};
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, bool flip_sign) {
    std::vector<GradCheckCase> out;
    out.push_back(affine_chain(seed, flip_sign));
    out.push_back(conv_stack(seed, flip_sign));
    out.push_back(mlp_energy(seed, flip_sign));
    out.push_back(unet_energy(seed, flip_sign));
    return out;
}

}  // namespace dsr
