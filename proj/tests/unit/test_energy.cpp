#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dsr/energy.hpp"
#include "oracles.hpp"

using namespace dsr;

TEST_CASE("scalar and vector energy loss match the triple-loop oracle") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        auto fan = oracle::random_fan(rng, 8, 6, 12, 2);
        const auto want = oracle::energy_naive(fan);
        const auto got = energy_loss_vector(fan);
        CHECK(oracle::rel_err(got.total, want.total) < 1e-9);
        CHECK(oracle::rel_err(got.data_term, want.data) < 1e-9);
        CHECK(oracle::rel_err(got.spread_term, want.spread) < 1e-9);

        auto scalar = oracle::random_fan(rng, 8, 6, 1, 2);
        const auto ws = oracle::energy_naive(scalar);
        CHECK(oracle::rel_err(energy_loss_scalar(scalar).total, ws.total) < 1e-9);
        CHECK(oracle::rel_err(energy_loss_scalar(scalar, SpreadMethod::pairwise).total, ws.total) < 1e-9);
    }
}

TEST_CASE("known small value") {
    // Y = 0, samples {1, 3}: data = 2, spread = (2 * 2) / (2 * 2 * 1) = 1.
    PredictionFan<double> f{1, 2, 1, {0.0}, {1.0, 3.0}};
    const auto lv = energy_loss_scalar(f);
    CHECK(lv.data_term == 2.0);
    CHECK(lv.spread_term == 1.0);
    CHECK(lv.total == 1.0);
}

TEST_CASE("degenerate fan: identical replicates reduce to mean absolute error") {
    PredictionFan<double> f{2, 3, 2, {0, 0, 1, 1}, {3, 4, 3, 4, 3, 4, 1, 1, 1, 1, 1, 1}};
    const auto lv = energy_loss_vector(f);
    CHECK(lv.spread_term == 0.0);
    CHECK(lv.total == doctest::Approx(2.5));
}

TEST_CASE("m = 1 requires explicit opt-in") {
    PredictionFan<double> f{2, 1, 1, {0.0, 1.0}, {1.0, 1.0}};
    CHECK_THROWS_AS(energy_loss_scalar(f), ConfigError);
    Graph<double> g;
    auto s = g.parameter(Tensor<double>({2, 1}, {1.0, 1.0}));
    LossValue lv;
    auto l = ad::energy_loss(s, Tensor<double>({2, 1}, {0.0, 1.0}), 1, &lv);
    CHECK(lv.spread_term == 0.0);
    CHECK(l.value()[0] == doctest::Approx(0.5));
}

TEST_CASE("gradient is zero at the kinks") {
    Graph<double> g;
    auto s = g.parameter(Tensor<double>({2, 1}, {1.0, 1.0}));
    auto l = ad::energy_loss(s, Tensor<double>({1, 1}, {1.0}), 2);
    g.backward(l);
    CHECK(l.value()[0] == 0.0);
    CHECK(s.grad()[0] == 0.0);
    CHECK(s.grad()[1] == 0.0);
}

TEST_CASE("graph node gradient matches central differences") {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial % 4, m = 2 + trial % 3, k = 1 + trial % 5;
        Tensor<double> samples({n * m, k}), targets({n, k});
        for (auto& v : samples.data()) v = z(rng);
        for (auto& v : targets.data()) v = z(rng);
        Graph<double> g;
        auto s = g.parameter(samples);
        g.backward(ad::energy_loss(s, targets, m));
        const double h = 1e-6;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            Tensor<double> a = samples, b = samples;
            a[i] += h;
            b[i] -= h;
            std::vector<double> tv(targets.data().begin(), targets.data().end());
            PredictionFan<double> fa{n, m, k, tv, std::vector<double>(a.data().begin(), a.data().end())};
            PredictionFan<double> fb{n, m, k, tv, std::vector<double>(b.data().begin(), b.data().end())};
            const double fd = (energy_loss_vector(fa).total - energy_loss_vector(fb).total) / (2 * h);
            CHECK(s.grad()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("energy properties on random fans") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 200; ++trial) {
        auto f = oracle::random_fan(rng, 6, 6, 4, 2);
        const double base = energy_loss_vector(f).total;

        auto perm = f;
        for (std::size_t i = 0; i < f.n; ++i) {
            std::vector<std::size_t> order(f.m);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t j = 0; j < f.m; ++j)
                for (std::size_t c = 0; c < f.k; ++c)
                    perm.samples[(i * f.m + j) * f.k + c] = f.samples[(i * f.m + order[j]) * f.k + c];
        }
        CHECK(energy_loss_vector(perm).total == base);

        auto shifted = f;
        std::vector<double> shift(f.k);
        for (auto& s : shift) s = 5 * z(rng);
        for (std::size_t i = 0; i < f.targets.size(); ++i) shifted.targets[i] += shift[i % f.k];
        for (std::size_t i = 0; i < f.samples.size(); ++i) shifted.samples[i] += shift[i % f.k];
        CHECK(std::abs(energy_loss_vector(shifted).total - base) < 1e-9 * std::max(1.0, std::abs(base)) + 1e-12);

        const double c = 0.1 + std::abs(3 * z(rng));
        auto scaled = f;
        for (auto& v : scaled.targets) v *= c;
        for (auto& v : scaled.samples) v *= c;
        CHECK(std::abs(energy_loss_vector(scaled).total - c * base) < 1e-9 * std::max(1.0, std::abs(c * base)));
    }
}

TEST_CASE("cramer oracle") {
    std::vector<double> a{0.0, 1.0}, b{0.5};
    // F_a - F_b: [0, 0.5): 0.5, [0.5, 1): -0.5, so integral = 0.25 * 1.
    CHECK(cramer_distance_oracle(a, b) == doctest::Approx(0.25));
    CHECK(cramer_distance_oracle(b, a) == doctest::Approx(0.25));
    std::vector<double> aa{1.0, 0.0, 0.0, 1.0};
    CHECK(cramer_distance_oracle(a, aa) == 0.0);
    std::mt19937_64 rng(24);
    std::normal_distribution<double> z;
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(1 + rng() % 8), y(1 + rng() % 8);
        for (auto& v : x) v = z(rng);
        for (auto& v : y) v = z(rng);
        CHECK(cramer_distance_oracle(x, y) == doctest::Approx(oracle::cramer_dense(x, y, 1e-5)).epsilon(1e-3));
    }
}

TEST_CASE("input validation") {
    PredictionFan<double> bad{2, 2, 1, {0.0}, {1.0, 2.0}};
    CHECK_THROWS_AS(energy_loss_vector(bad), DimensionError);
    PredictionFan<double> nan{1, 2, 1, {0.0}, {std::nan(""), 1.0}};
    CHECK_THROWS_AS(energy_loss_vector(nan), NumericError);
    PredictionFan<double> mse{2, 1, 1, {0.0, 1.0}, {1.0, 3.0}};
    CHECK(mse_loss(mse) == doctest::Approx(2.5));
}
