#include "dsr/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "dsr/predictor.hpp"

namespace dsr {
namespace {

const std::vector<double> kBetaCore{1.0, 1.2, 1.5};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double beta_norm2() {
    double s = 0;
    for (double b : kBetaCore) s += b * b;
    return s;
}

SimData generate(const SimConfig& cfg, GroundTruth truth, std::uint64_t seed) {
    const std::size_t d = cfg.dim;
    SimData data{std::move(truth), Tensor<double>({cfg.n, d}), Tensor<double>({cfg.n, 1})};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> sd(d);
    for (std::size_t c = 0; c < d; ++c) sd[c] = std::sqrt(data.truth.noise_var[c]);
    std::vector<double> noisy(d);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            const double x = (cfg.x_upper - cfg.x_lower) * u(rng) + cfg.x_lower;
            data.x[i * d + c] = x;
            noisy[c] = x + sd[c] * z(rng);
        }
        data.y[i] = data.truth.mapping(data.truth.project(noisy));
    }
    return data;
}

template <typename T>
Tensor<T> grid_inputs(const std::vector<double>& grid, std::size_t d) {
    Tensor<T> x({grid.size(), d});
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) x[i * d + c] = static_cast<T>(grid[i]);
    return x;
}

void score(RunResult& r, const std::vector<double>& projection) {
    double in_d = 0, out_d = 0, in_l = 0, out_l = 0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < projection.size(); ++i) {
        const double ed = (r.dsr[i] - r.oracle[i]) * (r.dsr[i] - r.oracle[i]);
        const double el = r.l2.empty() ? 0.0 : (r.l2[i] - r.oracle[i]) * (r.l2[i] - r.oracle[i]);
        if (projection[i] <= r.threshold) {
            in_d += ed, in_l += el, ++n_in;
        } else {
            out_d += ed, out_l += el, ++n_out;
        }
    }
    const double ni = std::max<std::size_t>(n_in, 1), no = std::max<std::size_t>(n_out, 1);
    r.mse_in_dsr = in_d / ni;
    r.mse_in_l2 = in_l / ni;
    r.mse_out_dsr = out_d / no;
    r.mse_out_l2 = out_l / no;
}

}  // namespace

GName parse_g(const std::string& name) {
    if (name == "softplus") return GName::softplus;
    if (name == "square") return GName::square;
    if (name == "log") return GName::log;
    if (name == "cubic") return GName::cubic;
    throw ConfigError("unknown mapping function '" + name + "' (expected softplus, square, log or cubic)");
}

std::string g_name(GName g) {
    switch (g) {
        case GName::softplus: return "softplus";
        case GName::square: return "square";
        case GName::log: return "log";
        case GName::cubic: return "cubic";
    }
    return "?";
}

double g_eval(GName g, double x, double c1, double c2) {
    switch (g) {
        case GName::softplus: return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
        case GName::square: {
            const double p = std::max(0.0, x);
            return p * p / c1;
        }
        case GName::log: return x <= 2 ? x / 3.0 + std::log(3.0) - 2.0 / 3.0 : std::log1p(x);
        case GName::cubic: return x * x * x / c2;
    }
    return 0;
}

void SimConfig::validate() const {
    if (dim != 3 && dim != 64) throw ConfigError("sim.dim must be 3 or 64, got " + std::to_string(dim));
    if (!(x_lower < x_upper && x_upper < eval_upper)) throw ConfigError("sim bounds must satisfy x_lower < x_upper < eval_upper");
    if (n < 2 || n_eval < 2) throw ConfigError("sim.n and sim.n_eval must be >= 2");
    if (runs < 1) throw ConfigError("sim.runs must be >= 1");
    if (oracle_draws < 1 || predict_draws < 1) throw ConfigError("sim draw counts must be >= 1");
    if (!(c1 > 0 && c2 > 0)) throw ConfigError("sim.c1 and sim.c2 must be positive");
    if (mlp.input_dim != dim) throw ConfigError("model input_dim must equal sim.dim");
    train.validate();
}

SimConfig default_sim_config(std::size_t dim, GName g) {
    SimConfig c;
    c.dim = dim;
    c.g = g;
    if (dim == 64) {
        c.c1 = 20;
        c.c2 = 30;
        // Each draw samples all 64 noise coordinates; 1000 draws keep the MC
        // error of the predicted mean far below the run-to-run spread.
        c.predict_draws = 1000;
    }
    c.mlp.input_dim = dim;
    // Narrow enough that the unregularized L2 fit does not chase the heavy
    // response noise; m = 4 steadies the energy-score gradient.
    c.mlp.hidden = {16, 16};
    c.train.epochs = 2000;
    c.train.learning_rate = 1e-3;
    c.train.batch_size = 0;
    c.train.m = 4;
    return c;
}

SimConfig sim_config_from_json(const json& j, SimConfig c) {
    const std::string where = "sim";
    reject_unknown_keys(j, {"dim", "g", "n", "x_lower", "x_upper", "eval_upper", "n_eval", "runs", "oracle_draws",
                            "predict_draws", "c1", "c2", "seed", "parallel"},
                        where);
    if (j.contains("dim")) {
        std::size_t dim = c.dim;
        read_opt(j, "dim", dim, where);
        if (dim != 3 && dim != 64) throw ConfigError("sim.dim must be 3 or 64, got " + std::to_string(dim));
        if (dim != c.dim) {
            const SimConfig d = default_sim_config(dim, c.g);
            c.dim = dim;
            c.c1 = d.c1;
            c.c2 = d.c2;
            c.mlp.input_dim = dim;
        }
    }
    std::string g = g_name(c.g);
    read_opt(j, "g", g, where);
    c.g = parse_g(g);
    read_opt(j, "n", c.n, where);
    read_opt(j, "x_lower", c.x_lower, where);
    read_opt(j, "x_upper", c.x_upper, where);
    read_opt(j, "eval_upper", c.eval_upper, where);
    read_opt(j, "n_eval", c.n_eval, where);
    read_opt(j, "runs", c.runs, where);
    read_opt(j, "oracle_draws", c.oracle_draws, where);
    read_opt(j, "predict_draws", c.predict_draws, where);
    read_opt(j, "c1", c.c1, where);
    read_opt(j, "c2", c.c2, where);
    read_opt(j, "seed", c.seed, where);
    read_opt(j, "parallel", c.parallel, where);
    return c;
}

json sim_config_to_json(const SimConfig& c) {
    return {{"dim", c.dim},
            {"g", g_name(c.g)},
            {"n", c.n},
            {"x_lower", c.x_lower},
            {"x_upper", c.x_upper},
            {"eval_upper", c.eval_upper},
            {"n_eval", c.n_eval},
            {"runs", c.runs},
            {"oracle_draws", c.oracle_draws},
            {"predict_draws", c.predict_draws},
            {"c1", c.c1},
            {"c2", c.c2},
            {"seed", c.seed},
            {"parallel", c.parallel}};
}

double GroundTruth::project(std::span<const double> x) const {
    double s = 0;
    for (std::size_t c = 0; c < beta.size(); ++c) s += beta[c] * x[c];
    return s;
}

GroundTruth lowdim_truth(const SimConfig& cfg) {
    if (cfg.dim != 3) throw ConfigError("the low-dimensional setting needs dim = 3");
    const double w = cfg.x_upper - cfg.x_lower;
    const double var_proj = w * w / 12.0 * beta_norm2();
    return {kBetaCore, std::vector<double>(3, 1.0 / var_proj), cfg.g, cfg.c1, cfg.c2};
}

GroundTruth highdim_truth(const SimConfig& cfg, std::uint64_t seed) {
    if (cfg.dim < kBetaCore.size()) throw ConfigError("the high-dimensional setting needs dim >= 3");
    std::vector<std::size_t> idx(cfg.dim);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix64(seed ^ 0xb7e151628aed2a6bULL));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::sort(idx.begin(), idx.begin() + 3);
    GroundTruth t{std::vector<double>(cfg.dim, 0.0), std::vector<double>(cfg.dim, 1.0), cfg.g, cfg.c1, cfg.c2};
    for (std::size_t k = 0; k < 3; ++k) {
        t.beta[idx[k]] = kBetaCore[k];
        t.noise_var[idx[k]] = 1.0 / beta_norm2();
    }
    return t;
}

SimData gen_lowdim(const SimConfig& cfg, std::uint64_t seed) { return generate(cfg, lowdim_truth(cfg), seed); }

SimData gen_highdim(const SimConfig& cfg, std::uint64_t seed) { return generate(cfg, highdim_truth(cfg, seed), seed); }

SimData gen_data(const SimConfig& cfg, std::uint64_t seed) {
    return cfg.dim == 3 ? gen_lowdim(cfg, seed) : gen_highdim(cfg, seed);
}

std::vector<double> eval_grid(const SimConfig& cfg) {
    if (cfg.n_eval < 2) throw ConfigError("eval grid needs at least two points");
    std::vector<double> g(cfg.n_eval);
    for (std::size_t i = 0; i < cfg.n_eval; ++i)
        g[i] = static_cast<double>(i) * cfg.eval_upper / static_cast<double>(cfg.n_eval - 1);
    return g;
}

std::vector<double> oracle_mean(const GroundTruth& truth, const std::vector<double>& grid, std::size_t draws,
                                std::uint64_t seed) {
    if (draws < 1) throw ConfigError("oracle_mean needs N >= 1");
    // Only beta^T eps matters; coordinates with beta_c = 0 drop out.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> shift(draws, 0.0);
    for (std::size_t k = 0; k < draws; ++k)
        for (std::size_t c = 0; c < truth.beta.size(); ++c)
            if (truth.beta[c] != 0) shift[k] += truth.beta[c] * std::sqrt(truth.noise_var[c]) * z(rng);
    double beta_sum = 0;
    for (double b : truth.beta) beta_sum += b;
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double proj = grid[i] * beta_sum;
        double acc = 0;
        for (double s : shift) acc += truth.mapping(proj + s);
        out[i] = acc / static_cast<double>(draws);
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::uint64_t run_seed(std::uint64_t base, std::size_t run) { return splitmix64(base * 0x100000001b3ULL + run); }

RunResult run_single(const SimConfig& cfg, std::size_t run, bool with_l2) {
    RunResult r;
    r.run = run;
    r.seed = run_seed(cfg.seed, run);
    try {
        cfg.validate();
        const SimData data = gen_data(cfg, r.seed);
        const std::size_t d = cfg.dim;
        r.beta_true = data.truth.beta;
        r.threshold = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cfg.n; ++i)
            r.threshold = std::max(r.threshold, data.truth.project({data.x.ptr() + i * d, d}));

        const auto grid = eval_grid(cfg);
        std::vector<double> projection(grid.size());
        double beta_sum = 0;
        for (double b : data.truth.beta) beta_sum += b;
        for (std::size_t i = 0; i < grid.size(); ++i) projection[i] = grid[i] * beta_sum;
        r.oracle = oracle_mean(data.truth, grid, cfg.oracle_draws, splitmix64(cfg.seed ^ 0x0a11c1eULL));

        const Dataset<float> train{data.x.cast<float>(), data.y.cast<float>()};
        const auto init = build_mlp<float>(cfg.mlp, r.seed);
        const Tensor<float> xg = grid_inputs<float>(grid, d);

        TrainConfig tc = cfg.train;
        tc.seed = r.seed;
        tc.loss = LossKind::energy;
        tc.noise_diag = data.truth.noise_var;
        auto dsr = pretrain(init, train, nullptr, tc);
        PredictSpec ps;
        ps.J = cfg.predict_draws;
        ps.noise_diag = data.truth.noise_var;
        ps.seed = splitmix64(r.seed ^ 0x9d1c7ULL);
        const Tensor<float> yd = mc_upsample(dsr.model, xg, ps);
        r.dsr.assign(yd.data().begin(), yd.data().end());

        // Report beta with the first support coordinate pinned to 1.
        const auto& w = dsr.model.get("embed.weight").value;
        std::size_t anchor = 0;
        while (anchor < d && data.truth.beta[anchor] == 0) ++anchor;
        if (std::abs(static_cast<double>(w[anchor])) < 1e-12) throw DegenerateDirectionError("estimated beta anchor is ~0");
        double err = 0;
        for (std::size_t c = 0; c < d; ++c) {
            r.beta_hat.push_back(static_cast<double>(w[c]) / w[anchor]);
            err += (r.beta_hat[c] - r.beta_true[c]) * (r.beta_hat[c] - r.beta_true[c]);
        }
        r.beta_error = std::sqrt(err);

        if (with_l2) {
            auto l2 = train_l2_baseline(init, train, nullptr, tc);
            const Tensor<float> yl = forward(l2.model, xg);
            r.l2.assign(yl.data().begin(), yl.data().end());
        }
        score(r, projection);
        r.ok = true;
    } catch (const Error& e) {
        r.ok = false;
        r.error = std::string(e.kind()) + ": " + e.what();
    }
    return r;
}

RunReport run_comparison(const SimConfig& cfg, std::ostream* progress) {
    cfg.validate();
    RunReport rep;
    rep.config = cfg;
    rep.grid = eval_grid(cfg);
    rep.runs.resize(cfg.runs);
    const int threads = static_cast<int>(std::max<std::size_t>(1, cfg.parallel));
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
    for (long k = 0; k < static_cast<long>(cfg.runs); ++k) {
        rep.runs[k] = run_single(cfg, static_cast<std::size_t>(k));
        if (progress) {
#pragma omp critical(dsr_progress)
            {
                const auto& r = rep.runs[k];
                *progress << "run " << k << (r.ok ? "" : " failed: " + r.error);
                if (r.ok) {
                    *progress << " out-of-domain mse dsr " << r.mse_out_dsr << " l2 " << r.mse_out_l2
                              << " | in-domain dsr " << r.mse_in_dsr << " l2 " << r.mse_in_l2;
                }
                *progress << std::endl;
            }
        }
    }

    const std::size_t g = rep.grid.size();
    rep.oracle.assign(g, 0.0);
    rep.projection.assign(g, 0.0);
    std::size_t ok = 0;
    for (const auto& r : rep.runs) {
        if (!r.ok) continue;
        ++ok;
        double beta_sum = 0;
        for (double b : r.beta_true) beta_sum += b;
        for (std::size_t i = 0; i < g; ++i) {
            rep.oracle[i] += r.oracle[i];
            rep.projection[i] = rep.grid[i] * beta_sum;
        }
    }
    if (ok) for (auto& v : rep.oracle) v /= static_cast<double>(ok);
    auto band = [&](std::vector<double> RunResult::*field) {
        Band b;
        std::vector<double> col;
        for (std::size_t i = 0; i < g; ++i) {
            col.clear();
            for (const auto& r : rep.runs)
                if (r.ok && !(r.*field).empty()) col.push_back((r.*field)[i]);
            b.mean.push_back(col.empty() ? std::nan("") : std::accumulate(col.begin(), col.end(), 0.0) / col.size());
            b.q10.push_back(quantile(col, 0.1));
            b.q90.push_back(quantile(col, 0.9));
        }
        return b;
    };
    rep.dsr = band(&RunResult::dsr);
    rep.l2 = band(&RunResult::l2);
    return rep;
}

std::size_t RunReport::successful() const {
    std::size_t k = 0;
    for (const auto& r : runs) k += r.ok ? 1 : 0;
    return k;
}

double RunReport::median(double RunResult::*field) const {
    std::vector<double> v;
    for (const auto& r : runs)
        if (r.ok) v.push_back(r.*field);
    return quantile(v, 0.5);
}

json RunReport::summary() const {
    json j;
    j["config"] = sim_config_to_json(config);
    j["config"]["mlp"] = arch_to_json(config.mlp);
    j["config"]["train"] = train_config_to_json(config.train);
    j["runs_requested"] = runs.size();
    j["runs_succeeded"] = successful();
    j["median"] = {{"mse_in_dsr", median(&RunResult::mse_in_dsr)},
                   {"mse_in_l2", median(&RunResult::mse_in_l2)},
                   {"mse_out_dsr", median(&RunResult::mse_out_dsr)},
                   {"mse_out_l2", median(&RunResult::mse_out_l2)},
                   {"beta_error", median(&RunResult::beta_error)}};
    json list = json::array();
    for (const auto& r : runs) {
        json e = {{"run", r.run}, {"seed", r.seed}, {"ok", r.ok}};
        if (!r.ok) {
            e["error"] = r.error;
        } else {
            e["threshold"] = r.threshold;
            e["mse_in_dsr"] = r.mse_in_dsr;
            e["mse_out_dsr"] = r.mse_out_dsr;
            e["mse_in_l2"] = r.mse_in_l2;
            e["mse_out_l2"] = r.mse_out_l2;
            e["beta_true"] = r.beta_true;
            e["beta_hat"] = r.beta_hat;
            e["beta_error"] = r.beta_error;
        }
        list.push_back(e);
    }
    j["runs"] = list;
    return j;
}

void RunReport::write_csv(std::ostream& out) const {
    out << "estimator,x_projection,oracle,mean,q10,q90\n";
    out.precision(10);
    for (const auto& [name, band] : {std::pair<const char*, const Band*>{"dsr", &dsr}, {"l2", &l2}}) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            out << name << ',' << projection[i] << ',' << oracle[i] << ',' << band->mean[i] << ',' << band->q10[i]
                << ',' << band->q90[i] << '\n';
        }
    }
}

}  // namespace dsr
