// Serial reference kernels vs their OpenMP counterparts on U-Net-sized inputs.
// Prints median wall time per call and the max abs difference of the outputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dsr/kernels.hpp"

namespace k = dsr::kernels;

namespace {

std::vector<float> randn(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<float> z(0.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = z(rng);
    return v;
}

double median_ms(const std::function<void()>& fn, int reps) {
    std::vector<double> t;
    for (int r = 0; r < reps; ++r) {
        const auto a = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
    }
    std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
    return t[t.size() / 2];
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

void row(const char* name, double ref_ms, double omp_ms, double diff) {
    std::printf("%-28s %10.3f %10.3f %8.2fx %10.2e\n", name, ref_ms, omp_ms, ref_ms / omp_ms, diff);
}

}  // namespace

int main() {
    std::mt19937_64 rng(1);
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::printf("threads %d\n%-28s %10s %10s %9s %10s\n", threads, "kernel", "ref ms", "omp ms", "speedup", "max diff");

    {
        const std::size_t n = 2000, d = 64, kk = 64;
        auto in = randn(n * d, rng), w = randn(d * kk, rng), b = randn(kk, rng);
        std::vector<float> o1(n * kk), o2(n * kk);
        const double a = median_ms([&] { k::ref::gemm_bias(in.data(), w.data(), b.data(), o1.data(), n, d, kk); }, 20);
        const double c = median_ms([&] { k::gemm_bias(in.data(), w.data(), b.data(), o2.data(), n, d, kk); }, 20);
        row("gemm_bias 2000x64x64", a, c, max_diff(o1, o2));
    }
    {
        k::Conv3dGeom g{4, 8, 8, 16, 16, 16, 3};
        auto in = randn(g.batch * g.c_in * g.voxels(), rng), w = randn(g.c_out * g.c_in * g.taps(), rng),
             b = randn(g.c_out, rng);
        std::vector<float> o1(g.batch * g.c_out * g.voxels()), o2(o1.size());
        const double a = median_ms([&] { k::ref::conv3d_forward(in.data(), w.data(), b.data(), o1.data(), g); }, 5);
        const double c = median_ms([&] { k::conv3d_forward(in.data(), w.data(), b.data(), o2.data(), g); }, 5);
        row("conv3d_forward 4x8->8 16^3", a, c, max_diff(o1, o2));

        auto dout = randn(o1.size(), rng);
        std::vector<float> di1(in.size()), di2(in.size()), dw1(w.size()), dw2(w.size()), db1(b.size()), db2(b.size());
        const double a2 = median_ms([&] {
            std::fill(di1.begin(), di1.end(), 0.f), std::fill(dw1.begin(), dw1.end(), 0.f), std::fill(db1.begin(), db1.end(), 0.f);
            k::ref::conv3d_backward(in.data(), w.data(), dout.data(), di1.data(), dw1.data(), db1.data(), g);
        }, 5);
        const double c2 = median_ms([&] {
            std::fill(di2.begin(), di2.end(), 0.f), std::fill(dw2.begin(), dw2.end(), 0.f), std::fill(db2.begin(), db2.end(), 0.f);
            k::conv3d_backward(in.data(), w.data(), dout.data(), di2.data(), dw2.data(), db2.data(), g);
        }, 5);
        row("conv3d_backward 4x8->8 16^3", a2, c2, std::max(max_diff(di1, di2), max_diff(dw1, dw2)));
    }
    {
        k::Volume v{32, 16, 16, 16};
        auto in = randn(v.planes * v.voxels(), rng);
        std::vector<float> o1(in.size() / 8), o2(in.size() / 8);
        const double a = median_ms([&] { k::ref::avg_pool2(in.data(), o1.data(), v); }, 20);
        const double c = median_ms([&] { k::avg_pool2(in.data(), o2.data(), v); }, 20);
        row("avg_pool2 32x16^3", a, c, max_diff(o1, o2));
        k::Volume s{32, 8, 8, 8};
        std::vector<float> u1(in.size()), u2(in.size());
        const double a2 = median_ms([&] { k::ref::nearest_upsample(o1.data(), u1.data(), s, 2); }, 20);
        const double c2 = median_ms([&] { k::nearest_upsample(o1.data(), u2.data(), s, 2); }, 20);
        row("nearest_upsample 32x8^3 x2", a2, c2, max_diff(u1, u2));
    }
    {
        const std::size_t m = 4000, g = 4096;
        std::uniform_real_distribution<float> u(0.f, 5.f);
        std::vector<float> pts(3 * m), vel = randn(3 * m, rng), cen(3 * g), o1(3 * g), o2(3 * g);
        for (auto& p : pts) p = u(rng);
        for (auto& p : cen) p = u(rng);
        const double a = median_ms([&] { k::ref::idw_assign(pts.data(), vel.data(), m, cen.data(), o1.data(), g, 1e-9f); }, 3);
        const double c = median_ms([&] { k::idw_assign(pts.data(), vel.data(), m, cen.data(), o2.data(), g, 1e-9f); }, 3);
        row("idw_assign 4000 -> 16^3", a, c, max_diff(o1, o2));
    }
    return 0;
}
