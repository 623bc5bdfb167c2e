#pragma once

// Finite-difference verification of reverse-mode gradients.
//
// The loss is supplied as a generic callable `loss(graph, params)` returning
// a scalar Var, so the same composite can be evaluated at two precisions:
// analytic gradients come from a Graph<T>; the central differences from a
// Graph<double>. For T = double both sides share the precision.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsr/autodiff.hpp"
#include "dsr/errors.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

struct GradCheckOptions {
    std::size_t probes = 32;  // coordinates probed; all of them when the model is smaller
    double step = 1e-4;
    // Added to |central difference| in the denominator.
    double guard = 1e-8;
    std::uint64_t seed = 0;
    // Negates the analytic gradient before comparing; used to confirm the
    // harness notices a sign-flip bug.
    bool flip_sign = false;
};

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t probes = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
};

template <typename T, typename LossFn>
GradCheckResult grad_check(LossFn&& loss, const std::vector<Tensor<T>>& params, const GradCheckOptions& opt = {}) {
    // Analytic gradients.
    std::vector<Tensor<T>> analytic;
    {
        Graph<T> g;
        std::vector<Var<T>> vars;
        for (const auto& p : params) vars.push_back(g.parameter(p));
        Var<T> l = loss(g, std::span<const Var<T>>(vars));
        g.backward(l);
        for (const auto& v : vars) analytic.push_back(v.grad());
    }

    std::vector<Tensor<double>> base;
    for (const auto& p : params) base.push_back(p.template cast<double>());
    auto eval = [&](const std::vector<Tensor<double>>& values) {
        Graph<double> g;
        std::vector<Var<double>> vars;
        for (const auto& p : values) vars.push_back(g.constant(p));
        Var<double> l = loss(g, std::span<const Var<double>>(vars));
        const double v = l.value()[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss while probing");
        return v;
    };

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    if (total <= opt.probes) {
        for (std::size_t a = 0; a < params.size(); ++a)
            for (std::size_t i = 0; i < params[a].size(); ++i) coords.emplace_back(a, i);
    } else {
        std::mt19937_64 rng(opt.seed);
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (std::size_t s = 0; s < opt.probes; ++s) {
            std::size_t flat = pick(rng), a = 0;
            while (flat >= params[a].size()) flat -= params[a].size(), ++a;
            coords.emplace_back(a, flat);
        }
    }

    GradCheckResult res;
    res.probes = coords.size();
    for (auto [a, i] : coords) {
        const double orig = base[a][i];
        base[a][i] = orig + opt.step;
        const double up = eval(base);
        base[a][i] = orig - opt.step;
        const double down = eval(base);
        base[a][i] = orig;
        const double numeric = (up - down) / (2.0 * opt.step);
        double an = static_cast<double>(analytic[a][i]);
        if (opt.flip_sign) an = -an;
        const double rel = std::abs(an - numeric) / (std::abs(numeric) + opt.guard);
        if (rel >= res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_param = a;
            res.worst_index = i;
            res.worst_analytic = an;
            res.worst_numeric = numeric;
        }
    }
    return res;
}

/// One registered composite of the verification suite.
struct GradCheckCase {
    std::string name;
    std::string precision;  // "f64" or "f32"
    double threshold = 0;
    GradCheckResult result;
    bool passed() const { return result.max_rel_error < threshold; }
};

/// Runs every composite used by netzoo and energy: affine chains, conv
/// stacks, the MLP with the scalar energy loss (f64) and a 16^3 U-Net with
/// the vector energy loss (f32).
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 7, bool flip_sign = false);

}  // namespace dsr
