#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written from the definitions, as plain loops, without library helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dsr/energy.hpp"

namespace oracle {

inline double euclid(const double* a, const double* b, std::size_t k) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
    return std::sqrt(s);
}

struct Energy {
    double data = 0, spread = 0, total = 0;
};

// data = 1/(nm) sum_i sum_j |Y_i - g_ij|, spread = 1/(2nm(m-1)) sum_i sum_j sum_j' |g_ij - g_ij'|
inline Energy energy_naive(const dsr::PredictionFan<double>& f) {
    Energy e;
    for (std::size_t i = 0; i < f.n; ++i) {
        for (std::size_t j = 0; j < f.m; ++j) {
            e.data += euclid(&f.targets[i * f.k], &f.samples[(i * f.m + j) * f.k], f.k);
            for (std::size_t jj = 0; jj < f.m; ++jj)
                e.spread += euclid(&f.samples[(i * f.m + j) * f.k], &f.samples[(i * f.m + jj) * f.k], f.k);
        }
    }
    e.data /= static_cast<double>(f.n * f.m);
    e.spread = f.m > 1 ? e.spread / (2.0 * f.n * f.m * (f.m - 1)) : 0.0;
    e.total = e.data - e.spread;
    return e;
}

inline dsr::PredictionFan<double> random_fan(std::mt19937_64& rng, std::size_t max_n, std::size_t max_m,
                                             std::size_t max_k, std::size_t min_m = 1) {
    std::uniform_int_distribution<std::size_t> n(1, max_n), m(min_m, max_m), k(1, max_k);
    std::normal_distribution<double> z(0, 1);
    dsr::PredictionFan<double> f;
    f.n = n(rng);
    f.m = m(rng);
    f.k = k(rng);
    for (std::size_t i = 0; i < f.n * f.k; ++i) f.targets.push_back(2 * z(rng));
    for (std::size_t i = 0; i < f.n * f.m * f.k; ++i) f.samples.push_back(2 * z(rng));
    return f;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Midpoint-rule integral of (F_a - F_b)^2 on a uniform grid of spacing h.
// Both CDFs are step functions, so the error is at most h per breakpoint.
inline double cramer_dense(std::vector<double> a, std::vector<double> b, double h) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double lo = std::min(a.front(), b.front()), hi = std::max(a.back(), b.back());
    const std::size_t steps = static_cast<std::size_t>(std::ceil((hi - lo) / h));
    std::size_t ia = 0, ib = 0;
    double acc = 0;
    for (std::size_t s = 0; s < steps; ++s) {
        const double x = lo + (static_cast<double>(s) + 0.5) * h;
        while (ia < a.size() && a[ia] <= x) ++ia;
        while (ib < b.size() && b[ib] <= x) ++ib;
        const double d = static_cast<double>(ia) / a.size() - static_cast<double>(ib) / b.size();
        acc += d * d * h;
    }
    return acc;
}

}  // namespace oracle
