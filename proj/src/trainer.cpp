#include "dsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace dsr {
namespace {

constexpr std::uint64_t kValidationStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kFinalLayerSeed = 0x5eed0f1a7e57ULL;

struct NoiseLaw {
    std::vector<double> stddev;  // one per input component of a row, or a single isotropic value
    bool active = false;

    NoiseLaw(const TrainConfig& c, std::size_t row) {
        if (!c.noise_diag.empty()) {
            if (c.noise_diag.size() != row) {
                throw DimensionError("noise_diag has " + std::to_string(c.noise_diag.size()) +
                                     " entries but inputs have " + std::to_string(row) + " components");
            }
            for (double v : c.noise_diag) stddev.push_back(std::sqrt(v));
        } else {
            stddev.assign(1, std::sqrt(c.sigma2));
        }
        for (double s : stddev) active = active || s > 0;
    }

    double sd(std::size_t c) const { return stddev.size() == 1 ? stddev[0] : stddev[c]; }
};

std::size_t replicates(const TrainConfig& c) { return c.loss == LossKind::energy ? c.m : 1; }

// Builds [B*reps, ...] noised inputs and [B, ...] targets for the given rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const Dataset<T>& data, std::span<const std::size_t> rows, std::size_t reps,
                                           const NoiseLaw& noise, std::mt19937_64& rng) {
    const std::size_t row = data.inputs.size() / data.size();
    const std::size_t trow = data.targets.size() / data.size();
    Shape in_shape = data.inputs.shape();
    in_shape[0] = rows.size() * reps;
    Shape t_shape = data.targets.shape();
    t_shape[0] = rows.size();
    Tensor<T> x(in_shape), y(t_shape);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const T* src = data.inputs.ptr() + rows[b] * row;
        std::copy_n(data.targets.ptr() + rows[b] * trow, trow, y.ptr() + b * trow);
        for (std::size_t j = 0; j < reps; ++j) {
            T* dst = x.ptr() + (b * reps + j) * row;
            if (!noise.active) {
                std::copy_n(src, row, dst);
                continue;
            }
            for (std::size_t c = 0; c < row; ++c) dst[c] = static_cast<T>(src[c] + noise.sd(c) * z(rng));
        }
    }
    return {std::move(x), std::move(y)};
}

template <typename T>
LossValue batch_loss(const ModelParams<T>& model, const Dataset<T>& data, std::span<const std::size_t> rows,
                     const TrainConfig& cfg, const NoiseLaw& noise, std::mt19937_64& rng,
                     std::vector<Tensor<T>>* grads) {
    const std::size_t reps = replicates(cfg);
    auto [x, y] = make_batch(data, rows, reps, noise, rng);
    Graph<T> g;
    std::vector<Var<T>> vars = bind(model, g);
    Var<T> out = forward(model, std::span<const Var<T>>(vars), g.constant(std::move(x)));
    LossValue parts;
    Var<T> loss;
    if (cfg.loss == LossKind::energy) {
        loss = ad::energy_loss(out, y, reps, &parts);
    } else {
        loss = ad::mse_loss(out, y);
        parts.total = parts.data_term = static_cast<double>(loss.value()[0]);
    }
    if (grads) {
        g.backward(loss);
        grads->assign(vars.size(), Tensor<T>());
        for (std::size_t p = 0; p < vars.size(); ++p)
            if (model.params[p].trainable) (*grads)[p] = vars[p].grad();
    }
    return parts;
}

template <typename T>
void run_epochs(ModelParams<T>& model, const Dataset<T>& train, const Dataset<T>* val, const TrainConfig& cfg,
                std::size_t epochs, const std::string& tag, std::mt19937_64& rng, std::mt19937_64& val_rng,
                TrainReport& report) {
    const std::size_t n = train.size();
    const NoiseLaw noise(cfg, train.inputs.size() / n);
    const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    AdamState<T> adam;
    std::vector<Tensor<T>> grads;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (bs < n) std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        std::size_t batch = 0;
        for (std::size_t start = 0; start < n; start += bs, ++batch) {
            const std::size_t len = std::min(bs, n - start);
            std::span<const std::size_t> rows(order.data() + start, len);
            LossValue lv;
            try {
                lv = batch_loss(model, train, rows, cfg, noise, rng, &grads);
            } catch (const NumericError& err) {
                throw NumericError("training diverged at " + tag + " epoch " + std::to_string(report.epochs() + 1) +
                                   ", batch " + std::to_string(batch) + ": " + err.what());
            }
            if (!std::isfinite(lv.total)) {
                throw NumericError("training diverged at " + tag + " epoch " + std::to_string(report.epochs() + 1) +
                                   ", batch " + std::to_string(batch) + ": loss " + std::to_string(lv.total) +
                                   " (data " + std::to_string(lv.data_term) + ", spread " +
                                   std::to_string(lv.spread_term) + ")");
            }
            adam_step(model, grads, adam, cfg.learning_rate);
            total += lv.total * static_cast<double>(len);
        }
        report.train_loss.push_back(total / static_cast<double>(n));
        report.phase.push_back(tag);
        if (val && val->size() > 0) {
            report.val_loss.push_back(evaluate_loss(model, *val, cfg, val_rng()).total);
        }
        if (cfg.progress) {
            *cfg.progress << tag << " epoch " << report.epochs() << " loss " << report.train_loss.back();
            if (!report.val_loss.empty()) *cfg.progress << " val " << report.val_loss.back();
            *cfg.progress << '\n';
        }
    }
}

template <typename T>
void finish(TrainResult<T>& res, const TrainConfig& cfg, std::chrono::steady_clock::time_point t0) {
    res.report.seed = cfg.seed;
    if (!cfg.checkpoint_dir.empty()) {
        save_checkpoint(res.model, cfg.checkpoint_dir);
        res.report.checkpoint = cfg.checkpoint_dir.string();
    }
    res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
    if (name == "energy") return LossKind::energy;
    if (name == "mse") return LossKind::mse;
    throw ConfigError("unknown loss kind '" + name + "' (expected energy or mse)");
}

std::string loss_kind_name(LossKind kind) { return kind == LossKind::energy ? "energy" : "mse"; }

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (sigma2 < 0) throw ConfigError("train.sigma2 must be >= 0");
    bool noisy = noise_diag.empty() && sigma2 > 0;
    for (double v : noise_diag) {
        if (v < 0) throw ConfigError("train.noise_diag entries must be >= 0");
        noisy = noisy || v > 0;
    }
    if (loss == LossKind::energy) {
        if (m < 1) throw ConfigError("train.m must be >= 1");
        if (m < 2 && noisy) throw ConfigError("train.m must be >= 2 for the energy loss with noise");
    }
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    const std::string where = "train";
    reject_unknown_keys(j, {"learning_rate", "epochs", "batch_size", "m", "sigma2", "noise_diag", "seed", "loss",
                            "lp_epochs", "ft_epochs"},
                        where);
    read_opt(j, "learning_rate", c.learning_rate, where);
    read_opt(j, "epochs", c.epochs, where);
    read_opt(j, "batch_size", c.batch_size, where);
    read_opt(j, "m", c.m, where);
    read_opt(j, "sigma2", c.sigma2, where);
    read_opt(j, "noise_diag", c.noise_diag, where);
    read_opt(j, "seed", c.seed, where);
    std::string loss = loss_kind_name(c.loss);
    read_opt(j, "loss", loss, where);
    c.loss = parse_loss_kind(loss);
    read_opt(j, "lp_epochs", c.lp_epochs, where);
    read_opt(j, "ft_epochs", c.ft_epochs, where);
    c.validate();
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},       {"batch_size", c.batch_size},
            {"m", c.m},                         {"sigma2", c.sigma2},       {"noise_diag", c.noise_diag},
            {"seed", c.seed},                   {"loss", loss_kind_name(c.loss)}, {"lp_epochs", c.lp_epochs},
            {"ft_epochs", c.ft_epochs}};
}

template <typename T>
void Dataset<T>::validate() const {
    if (size() == 0) throw ConfigError("dataset is empty");
    if (targets.empty() || targets.extent(0) != size()) {
        throw DimensionError("dataset inputs " + shape_str(inputs.shape()) + " and targets " +
                             shape_str(targets.shape()) + " disagree on the row count");
    }
}

json TrainReport::to_json() const {
    json j;
    j["epochs"] = epochs();
    j["train_loss"] = train_loss;
    j["val_loss"] = val_loss;
    j["phase"] = phase;
    j["wall_seconds"] = wall_seconds;
    j["checkpoint"] = checkpoint;
    j["seed"] = seed;
    return j;
}

template <typename T>
void adam_step(ModelParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& s, double lr) {
    if (grads.size() != params.params.size()) throw DimensionError("adam_step: one gradient slot per parameter expected");
    if (s.m1.empty()) {
        for (const auto& p : params.params) {
            s.m1.emplace_back(p.value.shape());
            s.m2.emplace_back(p.value.shape());
        }
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < params.params.size(); ++k) {
        Parameter<T>& p = params.params[k];
        if (!p.trainable || grads[k].empty()) continue;
        if (grads[k].shape() != p.value.shape()) {
            throw DimensionError("adam_step: gradient " + shape_str(grads[k].shape()) + " for parameter " + p.name +
                                 " " + shape_str(p.value.shape()));
        }
        T* w = p.value.ptr();
        T* m1 = s.m1[k].ptr();
        T* m2 = s.m2[k].ptr();
        const T* g = grads[k].ptr();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double gi = g[i];
            const double a = s.beta1 * m1[i] + (1.0 - s.beta1) * gi;
            const double b = s.beta2 * m2[i] + (1.0 - s.beta2) * gi * gi;
            m1[i] = static_cast<T>(a);
            m2[i] = static_cast<T>(b);
            w[i] = static_cast<T>(w[i] - lr * (a / c1) / (std::sqrt(b / c2) + s.eps));
        }
    }
}

template <typename T>
LossValue evaluate_loss(const ModelParams<T>& model, const Dataset<T>& data, const TrainConfig& cfg,
                        std::uint64_t seed) {
    data.validate();
    std::mt19937_64 rng(seed);
    const NoiseLaw noise(cfg, data.inputs.size() / data.size());
    const std::size_t n = data.size();
    const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    LossValue acc;
    for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t len = std::min(bs, n - start);
        const LossValue lv = batch_loss<T>(model, data, {order.data() + start, len}, cfg, noise, rng, nullptr);
        const double w = static_cast<double>(len) / static_cast<double>(n);
        acc.total += w * lv.total;
        acc.data_term += w * lv.data_term;
        acc.spread_term += w * lv.spread_term;
    }
    return acc;
}

template <typename T>
TrainResult<T> pretrain(ModelParams<T> model, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                        const TrainConfig& cfg) {
    cfg.validate();
    train.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(cfg.seed), val_rng(cfg.seed ^ kValidationStream);
    TrainResult<T> res{std::move(model), {}};
    run_epochs(res.model, train, validation, cfg, cfg.epochs, "train", rng, val_rng, res.report);
    finish(res, cfg, t0);
    return res;
}

template <typename T>
TrainResult<T> finetune_lpft(const ModelParams<T>& pretrained, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                             const TrainConfig& cfg) {
    cfg.validate();
    train.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(cfg.seed), val_rng(cfg.seed ^ kValidationStream);
    TrainResult<T> res{replace_final_layer(pretrained, cfg.seed ^ kFinalLayerSeed), {}};
    run_epochs(res.model, train, validation, cfg, cfg.lp_epochs, "lp", rng, val_rng, res.report);
    res.model = set_trainable(std::move(res.model), TrainablePolicy::all);
    run_epochs(res.model, train, validation, cfg, cfg.ft_epochs, "ft", rng, val_rng, res.report);
    finish(res, cfg, t0);
    return res;
}

template <typename T>
TrainResult<T> train_l2_baseline(ModelParams<T> model, const Dataset<T>& train, std::type_identity_t<const Dataset<T>*> validation,
                                 TrainConfig cfg) {
    cfg.loss = LossKind::mse;
    cfg.m = 1;
    cfg.sigma2 = 0;
    cfg.noise_diag.clear();
    return pretrain(std::move(model), train, validation, cfg);
}

#define DSR_INSTANTIATE(T)                                                                                         \
    template struct Dataset<T>;                                                                                    \
    template void adam_step<T>(ModelParams<T>&, const std::vector<Tensor<T>>&, AdamState<T>&, double);            \
    template LossValue evaluate_loss<T>(const ModelParams<T>&, const Dataset<T>&, const TrainConfig&, std::uint64_t); \
    template TrainResult<T> pretrain<T>(ModelParams<T>, const Dataset<T>&, const Dataset<T>*, const TrainConfig&); \
    template TrainResult<T> finetune_lpft<T>(const ModelParams<T>&, const Dataset<T>&, const Dataset<T>*,           \
                                             const TrainConfig&);                                                  \
    template TrainResult<T> train_l2_baseline<T>(ModelParams<T>, const Dataset<T>&, const Dataset<T>*, TrainConfig);

DSR_INSTANTIATE(float)
DSR_INSTANTIATE(double)

#undef DSR_INSTANTIATE

}  // namespace dsr
