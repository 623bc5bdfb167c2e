#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "dsr/simlab.hpp"

using namespace dsr;

namespace {

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }
double Phi(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// E[max(0, Z)^2] for Z ~ N(mu, s^2).
double square_moment(double mu, double s) { return (mu * mu + s * s) * Phi(mu / s) + mu * s * phi(mu / s); }

SimConfig tiny(GName g) {
    SimConfig c = default_sim_config(3, g);
    c.n = 60;
    c.n_eval = 11;
    c.runs = 2;
    c.oracle_draws = 200;
    c.predict_draws = 20;
    c.train.epochs = 20;
    c.mlp.hidden = {4, 4};
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("link functions") {
    CHECK(g_eval(GName::softplus, 0.0, 7.4, 11.1) == doctest::Approx(std::log(2.0)));
    CHECK(g_eval(GName::square, 2.0, 7.4, 11.1) == doctest::Approx(4.0 / 7.4));
    CHECK(g_eval(GName::square, -1.0, 7.4, 11.1) == 0.0);
    CHECK(g_eval(GName::cubic, -2.0, 7.4, 11.1) == doctest::Approx(-8.0 / 11.1));
    CHECK(g_eval(GName::log, 2.0, 0, 0) == doctest::Approx(std::log(3.0)));
    CHECK(g_eval(GName::log, 2.0 + 1e-9, 0, 0) == doctest::Approx(std::log(3.0)));
    CHECK(g_eval(GName::log, 0.0, 0, 0) == doctest::Approx(std::log(3.0) - 2.0 / 3.0));
    for (GName g : kAllG) CHECK(parse_g(g_name(g)) == g);
    CHECK_THROWS_AS(parse_g("tanh"), ConfigError);
}

TEST_CASE("noise covariances") {
    const auto c = default_sim_config(3, GName::square);
    const auto t = lowdim_truth(c);
    const double var = 1.08 * 1.08 / 12 * (1 + 1.44 + 2.25);
    for (double v : t.noise_var) CHECK(v == doctest::Approx(1 / var));
    CHECK(t.beta == std::vector<double>{1.0, 1.2, 1.5});

    const auto h = highdim_truth(default_sim_config(64, GName::cubic), 7);
    std::vector<double> nz;
    for (std::size_t i = 0; i < 64; ++i) {
        if (h.beta[i] != 0) {
            nz.push_back(h.beta[i]);
            CHECK(h.noise_var[i] == doctest::Approx(1 / 4.69));
        } else {
            CHECK(h.noise_var[i] == 1.0);
        }
    }
    CHECK(nz == std::vector<double>{1.0, 1.2, 1.5});
    CHECK(h.c2 == 30.0);
    CHECK_FALSE(highdim_truth(default_sim_config(64, GName::cubic), 8).beta == h.beta);
}

TEST_CASE("generated data stays in the box and is reproducible") {
    auto c = default_sim_config(3, GName::square);
    c.n = 200;
    const auto d = gen_data(c, 3);
    CHECK(d.x.shape() == Shape{200, 3});
    CHECK(d.y.shape() == Shape{200, 1});
    for (double v : d.x.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.08);
    }
    for (double v : d.y.data()) CHECK(v >= 0.0);
    CHECK(gen_data(c, 3).y == d.y);
    CHECK_FALSE(gen_data(c, 4).y == d.y);
}

TEST_CASE("eval grid") {
    const auto c = default_sim_config(3, GName::square);
    const auto g = eval_grid(c);
    CHECK(g.size() == 1000);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == doctest::Approx(1.64));
    CHECK(g[1] == doctest::Approx(1.64 / 999));
}

TEST_CASE("oracle mean agrees with the closed form within 4 standard errors") {
    const auto c = default_sim_config(3, GName::square);
    const auto t = lowdim_truth(c);
    double s2 = 0;
    for (std::size_t i = 0; i < 3; ++i) s2 += t.beta[i] * t.beta[i] * t.noise_var[i];
    const double s = std::sqrt(s2);
    const std::vector<double> grid{0.0, 0.5, 1.0, 1.64};
    const std::size_t N = 20000;
    const auto got = oracle_mean(t, grid, N, 11);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double mu = 3.7 * grid[i];
        const double m1 = square_moment(mu, s) / 7.4;
        // Var of max(0,Z)^2 / c1 bounded by E[max(0,Z)^4] / c1^2; use a plain 4th moment bound.
        const double m4 = (std::pow(mu, 4) + 6 * mu * mu * s2 + 3 * s2 * s2) / (7.4 * 7.4);
        const double se = std::sqrt(std::max(m4 - m1 * m1, 0.0) / N);
        CHECK(std::abs(got[i] - m1) < 4 * se);
    }
}

TEST_CASE("quantile and run seeds") {
    CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
    CHECK(quantile({0, 10}, 0.1) == doctest::Approx(1.0));
    CHECK(run_seed(1, 0) != run_seed(1, 1));
    CHECK(run_seed(1, 0) == run_seed(1, 0));
}

TEST_CASE("comparison report shape and reproducibility") {
    const auto c = tiny(GName::square);
    const auto a = run_comparison(c);
    CHECK(a.runs.size() == 2);
    CHECK(a.successful() == 2);
    CHECK(a.grid.size() == 11);
    CHECK(a.dsr.q10[3] <= a.dsr.mean[3] + 1e-12 + (a.dsr.q90[3] - a.dsr.q10[3]));
    for (const auto& r : a.runs) CHECK(r.beta_hat.size() == 3);
    std::ostringstream x, y;
    a.write_csv(x);
    run_comparison(c).write_csv(y);
    CHECK(x.str() == y.str());
    std::size_t lines = 0;
    for (char ch : x.str()) lines += ch == '\n';
    CHECK(lines == 1 + 2 * 11);
    const auto s = a.summary();
    CHECK(s["runs_succeeded"] == 2);
    CHECK(s["runs"].size() == 2);
}

TEST_CASE("high-dimensional runs") {
    auto c = default_sim_config(64, GName::cubic);
    c.n = 40;
    c.n_eval = 5;
    c.runs = 1;
    c.oracle_draws = 50;
    c.predict_draws = 5;
    c.train.epochs = 5;
    c.mlp.hidden = {4};
    const auto r = run_single(c, 0);
    CHECK(r.ok);
    CHECK(r.beta_hat.size() == 64);
}

TEST_CASE("config validation and json") {
    auto c = default_sim_config(3, GName::square);
    CHECK_THROWS_AS(sim_config_from_json(json{{"runz", 3}}, c), ConfigError);
    CHECK_THROWS_AS(sim_config_from_json(json{{"dim", 5}}, c), ConfigError);
    const auto d = sim_config_from_json(json{{"dim", 64}, {"runs", 3}}, c);
    CHECK(d.dim == 64);
    CHECK(d.c1 == 20.0);
    CHECK(d.runs == 3);
    c.n_eval = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
