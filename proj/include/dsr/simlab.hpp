#pragma once

// Simulation studies: data from Y = g(beta^T (X + eps)), an oracle mean on an
// extrapolation grid, and DSR vs L2-regression comparisons over replicates.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsr/json_util.hpp"
#include "dsr/netzoo.hpp"
#include "dsr/trainer.hpp"

namespace dsr {

enum class GName { softplus, square, log, cubic };

GName parse_g(const std::string& name);
std::string g_name(GName g);
inline const std::vector<GName> kAllG{GName::softplus, GName::square, GName::log, GName::cubic};

/// softplus ln(1+e^x); square max(0,x)^2/c1; log x/3 + ln3 - 2/3 for x <= 2,
/// ln(1+x) above; cubic x^3/c2.
double g_eval(GName g, double x, double c1, double c2);

struct SimConfig {
    std::size_t dim = 3;
    GName g = GName::square;
    std::size_t n = 1000;
    double x_lower = 0;
    double x_upper = 1.08;
    double eval_upper = 1.64;
    std::size_t n_eval = 1000;
    std::size_t runs = 20;
    std::size_t oracle_draws = 10000;   // N for the oracle mean
    std::size_t predict_draws = 10000;  // N for the DSR prediction average
    double c1 = 7.4;
    double c2 = 11.1;
    std::uint64_t seed = 0;
    std::size_t parallel = 1;
    MlpSpec mlp;
    TrainConfig train;

    void validate() const;
};

/// Study defaults for a dimension: c1/c2 = 7.4/11.1 (d=3) or 20/30 (d=64),
/// 2000 full-batch epochs at lr 1e-3, m = 4, a [16, 16] MLP; 1000 prediction
/// draws at dim 64.
SimConfig default_sim_config(std::size_t dim, GName g);
SimConfig sim_config_from_json(const json& j, SimConfig base);
json sim_config_to_json(const SimConfig& c);

struct GroundTruth {
    std::vector<double> beta;
    std::vector<double> noise_var;  // diagonal of Sigma
    GName g = GName::square;
    double c1 = 7.4, c2 = 11.1;

    double project(std::span<const double> x) const;
    double mapping(double z) const { return g_eval(g, z, c1, c2); }
};

struct SimData {
    GroundTruth truth;
    Tensor<double> x;  // [n, d]
    Tensor<double> y;  // [n, 1]
};

/// Sigma = diag(1 / var(beta^T x)) with the analytic uniform variance.
GroundTruth lowdim_truth(const SimConfig& cfg);
/// Three seeded support positions carrying (1, 1.2, 1.5); noise variance
/// 1/||beta||^2 on the support and 1 elsewhere.
GroundTruth highdim_truth(const SimConfig& cfg, std::uint64_t run_seed);

SimData gen_lowdim(const SimConfig& cfg, std::uint64_t run_seed);
SimData gen_highdim(const SimConfig& cfg, std::uint64_t run_seed);
SimData gen_data(const SimConfig& cfg, std::uint64_t run_seed);

/// x_eval,i = (i-1) * eval_upper / (n_eval - 1), shared by all coordinates.
std::vector<double> eval_grid(const SimConfig& cfg);

/// Monte-Carlo mean of g(beta^T (x + eps)) at x = (v, ..., v) for each grid value v.
std::vector<double> oracle_mean(const GroundTruth& truth, const std::vector<double>& grid, std::size_t draws,
                                std::uint64_t seed);

struct RunResult {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<double> oracle, dsr, l2;
    std::vector<double> beta_true, beta_hat;
    double beta_error = 0;
    double threshold = 0;  // max training beta^T x
    double mse_in_dsr = 0, mse_out_dsr = 0, mse_in_l2 = 0, mse_out_l2 = 0;
};

struct Band {
    std::vector<double> mean, q10, q90;
};

struct RunReport {
    SimConfig config;
    std::vector<double> grid;        // x_eval values
    std::vector<double> projection; // beta^T x_eval
    std::vector<double> oracle;     // across-run mean of the oracle
    std::vector<RunResult> runs;
    Band dsr, l2;

    std::size_t successful() const;
    double median(double RunResult::*field) const;
    json summary() const;
    void write_csv(std::ostream& out) const;
};

/// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> v, double q);

/// One replicate: generate, train DSR and L2 from the same initialization,
/// predict on the grid, score against the oracle.
RunResult run_single(const SimConfig& cfg, std::size_t run, bool with_l2 = true);

RunReport run_comparison(const SimConfig& cfg, std::ostream* progress = nullptr);

/// Seed of replicate `run` for a base seed.
std::uint64_t run_seed(std::uint64_t base, std::size_t run);

}  // namespace dsr
