#include <doctest.h>

#include <random>

#include "dsr/autodiff.hpp"
#include "dsr/grad_check.hpp"

using namespace dsr;

namespace {

Tensor<double> randn(Shape s, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> z(0, scale);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = z(rng);
    return t;
}

template <typename Fn>
double check(Fn&& fn, const std::vector<Tensor<double>>& params, std::size_t probes = 64) {
    GradCheckOptions opt;
    opt.probes = probes;
    opt.seed = 5;
    return grad_check<double>(fn, params, opt).max_rel_error;
}

}  // namespace

TEST_CASE("affine and activation gradients") {
    std::mt19937_64 rng(1);
    auto x = randn({4, 3}, rng), w = randn({3, 5}, rng), b = randn({5}, rng);
    for (auto act : {Activation::softplus(), Activation::leaky_relu(0.1)}) {
        auto loss = [act](auto& g, auto p) {
            auto h = ad::activation(ad::affine(p[0], p[1], p[2]), act);
            return ad::sum_squares(h);
        };
        CHECK(check(loss, {x, w, b}) < 1e-6);
    }
}

TEST_CASE("conv, pool, upsample, concat and residual gradients") {
    std::mt19937_64 rng(2);
    auto x = randn({2, 2, 4, 4, 4}, rng), k1 = randn({3, 2, 3, 3, 3}, rng, 0.3), b1 = randn({3}, rng),
         k2 = randn({2, 5, 1, 1, 1}, rng), b2 = randn({2}, rng);
    auto loss = [](auto& g, auto p) {
        auto h = ad::conv3d(p[0], p[1], p[2]);
        auto low = ad::avg_pool3d(h);
        auto up = ad::nearest_upsample3d(low, 2);
        auto cat = ad::concat_channels(up, p[0]);
        auto out = ad::add(ad::conv3d(cat, p[3], p[4]), p[0]);
        return ad::scale(ad::sum_squares(out), 0.5);
    };
    CHECK(check(loss, {x, k1, b1, k2, b2}, 96) < 1e-6);
}

TEST_CASE("reshape and sum route gradients unchanged") {
    Graph<double> g;
    auto p = g.parameter(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto s = ad::sum(ad::reshape(p, {6}));
    g.backward(s);
    for (double v : p.grad().data()) CHECK(v == 1.0);
    CHECK(s.value()[0] == 21.0);
}

TEST_CASE("leaf gradients accumulate until zero_grad") {
    Graph<double> g;
    auto p = g.parameter(Tensor<double>({1}, {3.0}));
    auto l = ad::sum_squares(p);
    g.backward(l);
    CHECK(p.grad()[0] == 6.0);
    g.backward(l);
    CHECK(p.grad()[0] == 12.0);
    g.zero_grad();
    CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("constants receive no gradient and frozen paths are skipped") {
    Graph<double> g;
    auto c = g.constant(Tensor<double>({2}, {1.0, 2.0}));
    auto p = g.parameter(Tensor<double>({2}, {0.5, -0.5}));
    auto l = ad::sum(ad::add(c, p));
    CHECK_FALSE(g.requires_grad(c.id()));
    g.backward(l);
    CHECK(c.grad()[0] == 0.0);
    CHECK(p.grad()[1] == 1.0);
}

TEST_CASE("errors") {
    Graph<double> g;
    auto p = g.parameter(Tensor<double>({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(p), UsageError);
    auto w = g.parameter(Tensor<double>({3, 2}));
    auto b = g.parameter(Tensor<double>({2}));
    CHECK_THROWS_AS(ad::affine(ad::reshape(p, {1, 2}), w, b), DimensionError);
    auto big = g.parameter(Tensor<double>({1}, {1e200}));
    CHECK_THROWS_AS(ad::sum_squares(ad::scale(big, 1e200)), NumericError);
    CHECK_THROWS_AS(Activation::parse("tanh"), ConfigError);
}

TEST_CASE("leaky relu kink takes the left slope") {
    const auto a = Activation::leaky_relu(0.2);
    CHECK(a.slope(0.0) == doctest::Approx(0.2));
    CHECK(a.slope(1e-12) == 1.0);
    CHECK(Activation::softplus().apply(0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("grad_check notices a sign flip") {
    std::mt19937_64 rng(3);
    auto w = randn({3, 2}, rng), b = randn({2}, rng), x = randn({4, 3}, rng);
    auto loss = [&](auto& g, auto p) {
        using U = typename std::decay_t<decltype(g)>::value_type;
        auto xi = g.constant(x.template cast<U>());
        return ad::sum_squares(ad::activation(ad::affine(xi, p[0], p[1]), Activation::softplus()));
    };
    GradCheckOptions opt;
    CHECK(grad_check<double>(loss, {w, b}, opt).max_rel_error < 1e-6);
    opt.flip_sign = true;
    CHECK(grad_check<double>(loss, {w, b}, opt).max_rel_error > 1.0);
}
