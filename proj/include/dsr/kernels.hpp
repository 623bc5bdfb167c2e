#pragma once

// Numeric kernels behind the differentiable ops and the voxelizer.
//
// Every kernel exists twice: a serial reference in kernels::ref, written as
// the plainest possible loop nest, and an OpenMP version in kernels. The
// parallel versions only split work over disjoint outputs and keep the
// per-output accumulation order fixed, so results do not depend on the
// thread count. Backward kernels accumulate (+=) into their outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace dsr::kernels {

using Index = std::ptrdiff_t;

struct Conv3dGeom {
    std::size_t batch = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t d = 1, h = 1, w = 1;
    std::size_t k = 3;  // odd, "same" zero padding

    std::size_t voxels() const { return d * h * w; }
    std::size_t taps() const { return k * k * k; }
    Index pad() const { return static_cast<Index>(k / 2); }
};

struct Volume {
    std::size_t planes = 1;  // batch * channels
    std::size_t d = 1, h = 1, w = 1;
    std::size_t voxels() const { return d * h * w; }
};

namespace ref {

template <typename T>
void gemm_bias(const T* in, const T* weight, const T* bias, T* out, std::size_t n, std::size_t d,
               std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            T acc = bias ? bias[j] : T{0};
            for (std::size_t l = 0; l < d; ++l) acc += in[i * d + l] * weight[l * k + j];
            out[i * k + j] = acc;
        }
    }
}

template <typename T>
void gemm_backward(const T* in, const T* weight, const T* dout, T* din, T* dweight, T* dbias,
                   std::size_t n, std::size_t d, std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const T g = dout[i * k + j];
            if (dbias) dbias[j] += g;
            for (std::size_t l = 0; l < d; ++l) {
                if (din) din[i * d + l] += g * weight[l * k + j];
                if (dweight) dweight[l * k + j] += g * in[i * d + l];
            }
        }
    }
}

template <typename T>
void conv3d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv3dGeom& g) {
    const Index D = g.d, H = g.h, W = g.w, K = g.k, P = g.pad();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.c_out; ++co)
            for (Index z = 0; z < D; ++z)
                for (Index y = 0; y < H; ++y)
                    for (Index x = 0; x < W; ++x) {
                        T acc = bias ? bias[co] : T{0};
                        for (std::size_t ci = 0; ci < g.c_in; ++ci)
                            for (Index kz = 0; kz < K; ++kz)
                                for (Index ky = 0; ky < K; ++ky)
                                    for (Index kx = 0; kx < K; ++kx) {
                                        const Index sz = z + kz - P, sy = y + ky - P, sx = x + kx - P;
                                        if (sz < 0 || sz >= D || sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                        acc += kernel[((co * g.c_in + ci) * K + kz) * K * K + ky * K + kx] *
                                               in[((n * g.c_in + ci) * D + sz) * H * W + sy * W + sx];
                                    }
                        out[((n * g.c_out + co) * D + z) * H * W + y * W + x] = acc;
                    }
}

template <typename T>
void conv3d_backward(const T* in, const T* kernel, const T* dout, T* din, T* dkernel, T* dbias,
                     const Conv3dGeom& g) {
    const Index D = g.d, H = g.h, W = g.w, K = g.k, P = g.pad();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.c_out; ++co)
            for (Index z = 0; z < D; ++z)
                for (Index y = 0; y < H; ++y)
                    for (Index x = 0; x < W; ++x) {
                        const T go = dout[((n * g.c_out + co) * D + z) * H * W + y * W + x];
                        if (dbias) dbias[co] += go;
                        for (std::size_t ci = 0; ci < g.c_in; ++ci)
                            for (Index kz = 0; kz < K; ++kz)
                                for (Index ky = 0; ky < K; ++ky)
                                    for (Index kx = 0; kx < K; ++kx) {
                                        const Index sz = z + kz - P, sy = y + ky - P, sx = x + kx - P;
                                        if (sz < 0 || sz >= D || sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                        const std::size_t ki = ((co * g.c_in + ci) * K + kz) * K * K + ky * K + kx;
                                        const std::size_t ii = ((n * g.c_in + ci) * D + sz) * H * W + sy * W + sx;
                                        if (din) din[ii] += go * kernel[ki];
                                        if (dkernel) dkernel[ki] += go * in[ii];
                                    }
                    }
}

template <typename T>
void avg_pool2(const T* in, T* out, const Volume& v) {
    const std::size_t od = v.d / 2, oh = v.h / 2, ow = v.w / 2;
    for (std::size_t p = 0; p < v.planes; ++p)
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    T acc{0};
                    for (std::size_t a = 0; a < 2; ++a)
                        for (std::size_t b = 0; b < 2; ++b)
                            for (std::size_t c = 0; c < 2; ++c)
                                acc += in[((p * v.d + 2 * z + a) * v.h + 2 * y + b) * v.w + 2 * x + c];
                    out[((p * od + z) * oh + y) * ow + x] = acc / T{8};
                }
}

template <typename T>
void nearest_upsample(const T* in, T* out, const Volume& v, std::size_t f) {
    const std::size_t od = v.d * f, oh = v.h * f, ow = v.w * f;
    for (std::size_t p = 0; p < v.planes; ++p)
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x)
                    out[((p * od + z) * oh + y) * ow + x] = in[((p * v.d + z / f) * v.h + y / f) * v.w + x / f];
}

// Inverse-distance assignment of member velocities onto centroids.
// points/velocities: m x 3, centroids/out: g x 3. A centroid closer than
// `coincide` to a member copies that member's velocity (lowest index wins).
template <typename T>
void idw_assign(const T* points, const T* velocities, std::size_t m, const T* centroids, T* out,
                std::size_t g, T coincide) {
    for (std::size_t c = 0; c < g; ++c) {
        const T* q = centroids + 3 * c;
        std::size_t hit = m;
        for (std::size_t i = 0; i < m && hit == m; ++i) {
            const T dx = points[3 * i] - q[0], dy = points[3 * i + 1] - q[1], dz = points[3 * i + 2] - q[2];
            if (std::sqrt(dx * dx + dy * dy + dz * dz) < coincide) hit = i;
        }
        if (hit < m) {
            for (int a = 0; a < 3; ++a) out[3 * c + a] = velocities[3 * hit + a];
            continue;
        }
        double wsum = 0, vx = 0, vy = 0, vz = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double dx = points[3 * i] - q[0], dy = points[3 * i + 1] - q[1], dz = points[3 * i + 2] - q[2];
            const double wi = 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
            wsum += wi;
            vx += wi * velocities[3 * i];
            vy += wi * velocities[3 * i + 1];
            vz += wi * velocities[3 * i + 2];
        }
        out[3 * c] = static_cast<T>(vx / wsum);
        out[3 * c + 1] = static_cast<T>(vy / wsum);
        out[3 * c + 2] = static_cast<T>(vz / wsum);
    }
}

}  // namespace ref

template <typename T>
void gemm_bias(const T* in, const T* weight, const T* bias, T* out, std::size_t n, std::size_t d,
               std::size_t k) {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
        T* row = out + i * k;
        for (std::size_t j = 0; j < k; ++j) row[j] = bias ? bias[j] : T{0};
        const T* x = in + i * d;
        for (std::size_t l = 0; l < d; ++l) {
            const T a = x[l];
            const T* wrow = weight + l * k;
#pragma omp simd
            for (std::size_t j = 0; j < k; ++j) row[j] += a * wrow[j];
        }
    }
}

template <typename T>
void gemm_backward(const T* in, const T* weight, const T* dout, T* din, T* dweight, T* dbias,
                   std::size_t n, std::size_t d, std::size_t k) {
    if (din) {
#pragma omp parallel for schedule(static)
        for (Index i = 0; i < static_cast<Index>(n); ++i) {
            const T* g = dout + i * k;
            T* dx = din + i * d;
            for (std::size_t l = 0; l < d; ++l) {
                const T* wrow = weight + l * k;
                T acc{0};
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = 0; j < k; ++j) acc += g[j] * wrow[j];
                dx[l] += acc;
            }
        }
    }
    if (dweight) {
#pragma omp parallel for schedule(static)
        for (Index l = 0; l < static_cast<Index>(d); ++l) {
            T* dw = dweight + l * k;
            for (std::size_t i = 0; i < n; ++i) {
                const T a = in[i * d + l];
                const T* g = dout + i * k;
#pragma omp simd
                for (std::size_t j = 0; j < k; ++j) dw[j] += a * g[j];
            }
        }
    }
    if (dbias) {
        for (std::size_t i = 0; i < n; ++i) {
            const T* g = dout + i * k;
            for (std::size_t j = 0; j < k; ++j) dbias[j] += g[j];
        }
    }
}

namespace detail {

// Convolutions run on zero-padded copies of their input planes. In padded
// coordinates every tap is a fixed offset, so each (plane, tap) pair is one
// long contiguous multiply-add instead of many clipped rows. Outputs live in
// "run" coordinates r = (z*hp + y)*wp + x; the run also covers the padding
// columns between rows, which are computed and then dropped.
struct Padded {
    std::size_t dp = 0, hp = 0, wp = 0, plane = 0;
    std::size_t run = 0;

    std::size_t offset(std::size_t kz, std::size_t ky, std::size_t kx) const { return (kz * hp + ky) * wp + kx; }
};

inline constexpr std::size_t kBlockSlack = 64;

inline Padded padded(const Conv3dGeom& g) {
    const std::size_t p = 2 * (g.k / 2);
    Padded q;
    q.dp = g.d + p;
    q.hp = g.h + p;
    q.wp = g.w + p;
    q.plane = q.dp * q.hp * q.wp;
    q.run = ((g.d - 1) * q.hp + (g.h - 1)) * q.wp + g.w;
    return q;
}

template <typename T>
std::vector<T> pad_planes(const T* in, std::size_t planes, const Conv3dGeom& g, const Padded& q) {
    // Tail slack lets blocked loops read a full block past the last run.
    std::vector<T> out(planes * q.plane + kBlockSlack, T{0});
    const std::size_t P = g.k / 2;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < static_cast<Index>(planes); ++p)
        for (std::size_t z = 0; z < g.d; ++z)
            for (std::size_t y = 0; y < g.h; ++y) {
                const T* src = in + ((p * g.d + z) * g.h + y) * g.w;
                std::copy(src, src + g.w, out.data() + p * q.plane + ((z + P) * q.hp + y + P) * q.wp + P);
            }
    return out;
}

// out[n, co] (+)= bias[co] + sum_ci sum_t kernel[co, ci, t] * xp[n, ci] shifted by tap t.
// The per-output accumulation order is bias, then ci, then taps in order.
template <typename T>
void conv_padded(const T* xp, const T* kernel, const T* bias, T* out, std::size_t batch, std::size_t c_in,
                 std::size_t c_out, const Conv3dGeom& g, const Padded& q, bool accumulate) {
    const std::size_t K = g.k, taps = g.taps(), V = g.voxels();
    constexpr std::size_t B = 32;
    const Index jobs = static_cast<Index>(batch * c_out);
#pragma omp parallel
    {
        std::vector<T> run(q.run);
#pragma omp for schedule(static)
        for (Index job = 0; job < jobs; ++job) {
            const std::size_t n = job / c_out, co = job % c_out;
            // A short block of outputs stays in registers across all taps.
            for (std::size_t r0 = 0; r0 < q.run; r0 += B) {
                const std::size_t len = std::min(B, q.run - r0);
                T acc[B];
                for (std::size_t i = 0; i < B; ++i) acc[i] = bias ? bias[co] : T{0};
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    const T* x = xp + (n * c_in + ci) * q.plane + r0;
                    const T* kk = kernel + (co * c_in + ci) * taps;
                    for (std::size_t kz = 0; kz < K; ++kz)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const T wv = kk[(kz * K + ky) * K + kx];
                                const T* src = x + q.offset(kz, ky, kx);
#pragma omp simd
                                for (std::size_t i = 0; i < B; ++i) acc[i] += wv * src[i];
                            }
                }
                std::copy(acc, acc + len, run.data() + r0);
            }
            T* o = out + job * V;
            for (std::size_t z = 0; z < g.d; ++z)
                for (std::size_t y = 0; y < g.h; ++y) {
                    const T* src = run.data() + (z * q.hp + y) * q.wp;
                    T* dst = o + (z * g.h + y) * g.w;
                    if (accumulate) {
                        for (std::size_t x = 0; x < g.w; ++x) dst[x] += src[x];
                    } else {
                        std::copy(src, src + g.w, dst);
                    }
                }
        }
    }
}

}  // namespace detail

template <typename T>
void conv3d_forward(const T* in, const T* kernel, const T* bias, T* out, const Conv3dGeom& g) {
    const detail::Padded q = detail::padded(g);
    const std::vector<T> xp = detail::pad_planes(in, g.batch * g.c_in, g, q);
    detail::conv_padded(xp.data(), kernel, bias, out, g.batch, g.c_in, g.c_out, g, q, false);
}

template <typename T>
void conv3d_backward(const T* in, const T* kernel, const T* dout, T* din, T* dkernel, T* dbias,
                     const Conv3dGeom& g) {
    const detail::Padded q = detail::padded(g);
    const std::size_t taps = g.taps();
    const std::vector<T> gp = detail::pad_planes(dout, g.batch * g.c_out, g, q);

    if (din) {
        // The input gradient is a convolution of dout with the kernel flipped
        // in all three axes and transposed in its channel dimensions.
        std::vector<T> flipped(g.c_in * g.c_out * taps);
        for (std::size_t co = 0; co < g.c_out; ++co)
            for (std::size_t ci = 0; ci < g.c_in; ++ci)
                for (std::size_t t = 0; t < taps; ++t)
                    flipped[(ci * g.c_out + co) * taps + t] = kernel[(co * g.c_in + ci) * taps + taps - 1 - t];
        detail::conv_padded(gp.data(), flipped.data(), static_cast<const T*>(nullptr), din, g.batch, g.c_out,
                            g.c_in, g, q, true);
    }

    if (dkernel) {
        const std::vector<T> xp = detail::pad_planes(in, g.batch * g.c_in, g, q);
        const std::size_t K = g.k, P = K / 2, centre = q.offset(P, P, P);
        constexpr std::size_t B = 1024;
        const Index jobs = static_cast<Index>(g.c_out * g.c_in);
#pragma omp parallel for schedule(static)
        for (Index job = 0; job < jobs; ++job) {
            const std::size_t co = job / g.c_in, ci = job % g.c_in;
            T* dk = dkernel + job * taps;
            for (std::size_t kz = 0; kz < K; ++kz)
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        // Padding between rows of the dout run is zero, so
                        // the whole run can be dotted in one sweep.
                        double total = 0;
                        for (std::size_t n = 0; n < g.batch; ++n) {
                            const T* go = gp.data() + (n * g.c_out + co) * q.plane + centre;
                            const T* x = xp.data() + (n * g.c_in + ci) * q.plane + q.offset(kz, ky, kx);
                            for (std::size_t r0 = 0; r0 < q.run; r0 += B) {
                                const std::size_t end = std::min(q.run, r0 + B);
                                T acc{0};
#pragma omp simd reduction(+ : acc)
                                for (std::size_t r = r0; r < end; ++r) acc += go[r] * x[r];
                                total += acc;
                            }
                        }
                        dk[(kz * K + ky) * K + kx] += static_cast<T>(total);
                    }
        }
    }

    if (dbias) {
        const std::size_t V = g.voxels();
        for (std::size_t co = 0; co < g.c_out; ++co) {
            double total = 0;
            for (std::size_t n = 0; n < g.batch; ++n) {
                const T* go = dout + (n * g.c_out + co) * V;
                T acc{0};
#pragma omp simd reduction(+ : acc)
                for (std::size_t v = 0; v < V; ++v) acc += go[v];
                total += acc;
            }
            dbias[co] += static_cast<T>(total);
        }
    }
}

template <typename T>
void avg_pool2(const T* in, T* out, const Volume& v) {
    const std::size_t od = v.d / 2, oh = v.h / 2, ow = v.w / 2;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < static_cast<Index>(v.planes); ++p) {
        const T* src = in + p * v.voxels();
        T* dst = out + p * od * oh * ow;
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y) {
                const T* r00 = src + ((2 * z) * v.h + 2 * y) * v.w;
                const T* r01 = r00 + v.w;
                const T* r10 = r00 + v.h * v.w;
                const T* r11 = r10 + v.w;
                T* o = dst + (z * oh + y) * ow;
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t a = 2 * x, b = 2 * x + 1;
                    o[x] = (r00[a] + r00[b] + r01[a] + r01[b] + r10[a] + r10[b] + r11[a] + r11[b]) / T{8};
                }
            }
    }
}

template <typename T>
void avg_pool2_backward(const T* dout, T* din, const Volume& v) {
    const std::size_t od = v.d / 2, oh = v.h / 2, ow = v.w / 2;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < static_cast<Index>(v.planes); ++p) {
        const T* go = dout + p * od * oh * ow;
        T* dx = din + p * v.voxels();
        for (std::size_t z = 0; z < v.d; ++z)
            for (std::size_t y = 0; y < v.h; ++y)
                for (std::size_t x = 0; x < v.w; ++x)
                    dx[(z * v.h + y) * v.w + x] += go[((z / 2) * oh + y / 2) * ow + x / 2] / T{8};
    }
}

template <typename T>
void nearest_upsample(const T* in, T* out, const Volume& v, std::size_t f) {
    const std::size_t od = v.d * f, oh = v.h * f, ow = v.w * f;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < static_cast<Index>(v.planes); ++p) {
        const T* src = in + p * v.voxels();
        T* dst = out + p * od * oh * ow;
        // Expand each source row once, then copy it into the duplicate rows and slabs.
        for (std::size_t z = 0; z < v.d; ++z) {
            T* slab = dst + z * f * oh * ow;
            for (std::size_t y = 0; y < v.h; ++y) {
                const T* srow = src + (z * v.h + y) * v.w;
                T* o = slab + y * f * ow;
                for (std::size_t x = 0; x < v.w; ++x)
                    for (std::size_t r = 0; r < f; ++r) o[x * f + r] = srow[x];
                for (std::size_t r = 1; r < f; ++r) std::copy(o, o + ow, o + r * ow);
            }
            for (std::size_t r = 1; r < f; ++r) std::copy(slab, slab + oh * ow, slab + r * oh * ow);
        }
    }
}

template <typename T>
void nearest_upsample_backward(const T* dout, T* din, const Volume& v, std::size_t f) {
    const std::size_t od = v.d * f, oh = v.h * f, ow = v.w * f;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < static_cast<Index>(v.planes); ++p) {
        const T* go = dout + p * od * oh * ow;
        T* dx = din + p * v.voxels();
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t y = 0; y < oh; ++y) {
                const T* grow = go + (z * oh + y) * ow;
                T* drow = dx + ((z / f) * v.h + y / f) * v.w;
                for (std::size_t x = 0; x < ow; ++x) drow[x / f] += grow[x];
            }
    }
}

template <typename T>
void idw_assign(const T* points, const T* velocities, std::size_t m, const T* centroids, T* out,
                std::size_t g, T coincide) {
#pragma omp parallel for schedule(dynamic, 16)
    for (Index c = 0; c < static_cast<Index>(g); ++c) {
        const T* q = centroids + 3 * c;
        const double qx = q[0], qy = q[1], qz = q[2];
        const double thr2 = static_cast<double>(coincide) * static_cast<double>(coincide);
        std::size_t hit = m;
        for (std::size_t i = 0; i < m; ++i) {
            const double dx = points[3 * i] - qx, dy = points[3 * i + 1] - qy, dz = points[3 * i + 2] - qz;
            if (dx * dx + dy * dy + dz * dz < thr2) {
                hit = i;
                break;
            }
        }
        if (hit < m) {
            for (int a = 0; a < 3; ++a) out[3 * c + a] = velocities[3 * hit + a];
            continue;
        }
        double wsum = 0, vx = 0, vy = 0, vz = 0;
#pragma omp simd reduction(+ : wsum, vx, vy, vz)
        for (std::size_t i = 0; i < m; ++i) {
            const double dx = points[3 * i] - qx, dy = points[3 * i + 1] - qy, dz = points[3 * i + 2] - qz;
            const double wi = 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
            wsum += wi;
            vx += wi * velocities[3 * i];
            vy += wi * velocities[3 * i + 1];
            vz += wi * velocities[3 * i + 2];
        }
        out[3 * c] = static_cast<T>(vx / wsum);
        out[3 * c + 1] = static_cast<T>(vy / wsum);
        out[3 * c + 2] = static_cast<T>(vz / wsum);
    }
}

}  // namespace dsr::kernels
