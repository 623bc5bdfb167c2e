#pragma once

// Energy-score training objectives.
//
// For observations i = 1..n with m prediction samples each,
//
//   data   = 1/(n m)            sum_i sum_j        |Y_i - g_ij|
//   spread = 1/(2 n m (m - 1))  sum_i sum_j sum_j' |g_ij - g_ij'|
//   total  = data - spread
//
// with |.| the Euclidean norm over all components of one sample. The
// diagonal j = j' contributes zero. Sums are accumulated in double.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "dsr/autodiff.hpp"
#include "dsr/errors.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

struct LossValue {
    double total = 0;
    double data_term = 0;
    double spread_term = 0;
};

/// Samples of n observations, m replicates each, every sample (and target)
/// holding k components. samples is observation-major: index (i*m + j)*k + c.
template <typename T>
struct PredictionFan {
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t k = 1;
    std::vector<T> targets;
    std::vector<T> samples;

    T target(std::size_t i, std::size_t c = 0) const { return targets[i * k + c]; }
    T sample(std::size_t i, std::size_t j, std::size_t c = 0) const { return samples[(i * m + j) * k + c]; }

    void validate() const {
        if (n < 1) throw ConfigError("prediction fan needs at least one observation");
        if (m < 1 || k < 1) throw ConfigError("prediction fan needs m >= 1 and k >= 1");
        if (targets.size() != n * k || samples.size() != n * m * k) {
            throw DimensionError("prediction fan: " + std::to_string(targets.size()) + " target values and " +
                                 std::to_string(samples.size()) + " sample values for n=" + std::to_string(n) +
                                 ", m=" + std::to_string(m) + ", k=" + std::to_string(k));
        }
    }
};

enum class SpreadMethod { pairwise, sorted };

namespace energy_detail {

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
    for (T v : values)
        if (!std::isfinite(static_cast<double>(v))) throw NumericError(std::string("non-finite value in ") + what);
}

inline double norm_diff(const auto* a, const auto* b, std::size_t k) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
        s += d * d;
    }
    return std::sqrt(s);
}

// Sum over ordered pairs j != j' of |a_j - a_j'| via sorting:
//   sum_r (2r - m + 1) a_(r), doubled.
inline double sorted_pair_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double m = static_cast<double>(v.size());
    double s = 0;
    for (std::size_t r = 0; r < v.size(); ++r) s += (2.0 * static_cast<double>(r) - m + 1.0) * v[r];
    return 2.0 * s;
}

}  // namespace energy_detail

/// Core evaluation used by both the public loss functions and the graph node.
/// When grad is non-empty it receives d(total)/d(samples) (overwritten).
/// m = 1 is accepted only when allow_single is set; the spread term is then 0.
template <typename T>
LossValue energy_loss_raw(std::span<const T> samples, std::span<const T> targets, std::size_t n, std::size_t m,
                          std::size_t k, std::span<T> grad = {}, bool allow_single = false) {
    if (n < 1) throw ConfigError("energy loss needs n >= 1");
    if (m < 2 && !(allow_single && m == 1)) {
        throw ConfigError("energy loss needs m >= 2 replicates, got m=" + std::to_string(m));
    }
    if (samples.size() != n * m * k || targets.size() != n * k) {
        throw DimensionError("energy loss: sample/target sizes do not match n, m, k");
    }
    energy_detail::check_finite(samples, "energy loss samples");
    energy_detail::check_finite(targets, "energy loss targets");
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != samples.size()) throw DimensionError("energy loss: gradient buffer size mismatch");

    const double data_scale = 1.0 / (static_cast<double>(n) * m);
    const double spread_scale = m > 1 ? 1.0 / (2.0 * n * m * (m - 1.0)) : 0.0;
    std::vector<double> data_part(n), spread_part(n);

#pragma omp parallel for schedule(static)
    for (kernels::Index ii = 0; ii < static_cast<kernels::Index>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        const T* y = targets.data() + i * k;
        const T* g = samples.data() + i * m * k;
        T* dg = want_grad ? grad.data() + i * m * k : nullptr;
        if (dg) std::fill(dg, dg + m * k, T{0});
        // Visiting replicates in lexicographic order makes the floating-point
        // sums independent of how the replicates were ordered on input.
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::lexicographical_compare(g + a * k, g + (a + 1) * k, g + b * k, g + (b + 1) * k);
        });
        double data = 0, spread = 0;
        for (std::size_t oj = 0; oj < m; ++oj) {
            const std::size_t j = order[oj];
            const T* gj = g + j * k;
            const double r = energy_detail::norm_diff(y, gj, k);
            data += r;
            if (dg && r > 0) {
                for (std::size_t c = 0; c < k; ++c)
                    dg[j * k + c] += static_cast<T>(data_scale * (static_cast<double>(gj[c]) - y[c]) / r);
            }
            for (std::size_t ojp = oj + 1; ojp < m; ++ojp) {
                const std::size_t jp = order[ojp];
                const T* gjp = g + jp * k;
                const double d = energy_detail::norm_diff(gj, gjp, k);
                spread += 2.0 * d;
                if (dg && d > 0) {
                    // d/dg_j of the ordered-pair sum (j,jp) + (jp,j) is 2 (g_j - g_jp)/d.
                    const double coef = 2.0 * spread_scale / d;
                    for (std::size_t c = 0; c < k; ++c) {
                        const double diff = static_cast<double>(gj[c]) - gjp[c];
                        dg[j * k + c] -= static_cast<T>(coef * diff);
                        dg[jp * k + c] += static_cast<T>(coef * diff);
                    }
                }
            }
        }
        data_part[i] = data;
        spread_part[i] = spread;
    }

    LossValue out;
    double data = 0, spread = 0;
    for (std::size_t i = 0; i < n; ++i) {
        data += data_part[i];
        spread += spread_part[i];
    }
    out.data_term = data * data_scale;
    out.spread_term = spread * spread_scale;
    out.total = out.data_term - out.spread_term;
    return out;
}

/// Univariate energy loss. The sorted path computes the spread term in
/// O(m log m) per observation; pairwise is the O(m^2) reference.
template <typename T>
LossValue energy_loss_scalar(const PredictionFan<T>& fan, SpreadMethod method = SpreadMethod::sorted) {
    fan.validate();
    if (fan.k != 1) throw DimensionError("energy_loss_scalar needs scalar targets (k=1), got k=" + std::to_string(fan.k));
    if (method == SpreadMethod::pairwise) {
        return energy_loss_raw<T>(fan.samples, fan.targets, fan.n, fan.m, 1);
    }
    if (fan.m < 2) throw ConfigError("energy loss needs m >= 2 replicates, got m=" + std::to_string(fan.m));
    energy_detail::check_finite<T>(fan.samples, "energy loss samples");
    energy_detail::check_finite<T>(fan.targets, "energy loss targets");
    double data = 0, spread = 0;
    std::vector<double> row(fan.m);
    for (std::size_t i = 0; i < fan.n; ++i) {
        const double y = fan.targets[i];
        for (std::size_t j = 0; j < fan.m; ++j) row[j] = fan.samples[i * fan.m + j];
        std::sort(row.begin(), row.end());
        for (double v : row) data += std::abs(y - v);
        spread += energy_detail::sorted_pair_sum(row);
    }
    LossValue out;
    const double nm = static_cast<double>(fan.n) * fan.m;
    out.data_term = data / nm;
    out.spread_term = spread / (2.0 * nm * (fan.m - 1.0));
    out.total = out.data_term - out.spread_term;
    return out;
}

/// Multivariate energy loss with Euclidean norms over all k components.
template <typename T>
LossValue energy_loss_vector(const PredictionFan<T>& fan) {
    fan.validate();
    return energy_loss_raw<T>(fan.samples, fan.targets, fan.n, fan.m, fan.k);
}

/// Mean over observations and components of the squared error; needs m = 1.
template <typename T>
double mse_loss(const PredictionFan<T>& fan) {
    fan.validate();
    if (fan.m != 1) throw DimensionError("mse_loss expects one prediction per target, got m=" + std::to_string(fan.m));
    double acc = 0;
    for (std::size_t i = 0; i < fan.targets.size(); ++i) {
        const double d = static_cast<double>(fan.samples[i]) - fan.targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(fan.targets.size());
}

/// Integral of (F_A - F_B)^2 for the two empirical CDFs, exact over the
/// merged breakpoints.
double cramer_distance_oracle(std::span<const double> a, std::span<const double> b);

namespace ad {

/// Energy loss as a graph node. samples: [n*m, ...], rows ordered i*m + j;
/// targets: [n, ...]. m = 1 is accepted and yields a zero spread term.
template <typename T>
Var<T> energy_loss(const Var<T>& samples, const Tensor<T>& targets, std::size_t m, LossValue* parts = nullptr) {
    const Shape& ss = samples.shape();
    const Shape& ts = targets.shape();
    if (ss.empty() || ts.empty() || m == 0 || ss[0] != ts[0] * m || row_shape(ss) != row_shape(ts)) {
        throw DimensionError("energy_loss: samples " + shape_str(ss) + " do not fan out targets " + shape_str(ts) +
                             " with m=" + std::to_string(m));
    }
    const std::size_t n = ts[0];
    const std::size_t k = numel(row_shape(ts));
    auto grad = std::make_shared<std::vector<T>>(samples.value().size());
    const LossValue lv = energy_loss_raw<T>(samples.value().data(), targets.data(), n, m, k, *grad, true);
    if (parts) *parts = lv;
    return samples.graph().record(Tensor<T>({1}, {static_cast<T>(lv.total)}), {samples.id()},
                                  [grad](Graph<T>& gr, std::size_t self) {
                                      const T go = gr.grad(self)[0];
                                      Tensor<T>& dx = gr.grad_buffer(gr.inputs(self)[0]);
                                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go * (*grad)[i];
                                  });
}

/// Mean squared error over all elements.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& targets) {
    if (pred.shape() != targets.shape()) {
        throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(targets.shape()));
    }
    const T* p = pred.value().ptr();
    const T* y = targets.ptr();
    const std::size_t count = targets.size();
    double acc = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = static_cast<double>(p[i]) - y[i];
        acc += d * d;
    }
    const double value = acc / static_cast<double>(count);
    auto target_copy = std::make_shared<Tensor<T>>(targets);
    return pred.graph().record(Tensor<T>({1}, {static_cast<T>(value)}), {pred.id()},
                               [target_copy, count](Graph<T>& gr, std::size_t self) {
                                   const std::size_t in = gr.inputs(self)[0];
                                   const T scale = static_cast<T>(2.0 / static_cast<double>(count)) * gr.grad(self)[0];
                                   const T* pv = gr.value(in).ptr();
                                   const T* yv = target_copy->ptr();
                                   T* dx = gr.grad_buffer(in).ptr();
                                   for (std::size_t i = 0; i < count; ++i) dx[i] += scale * (pv[i] - yv[i]);
                               });
}

}  // namespace ad
}  // namespace dsr
