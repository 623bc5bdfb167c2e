#include "dsr/geomdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "dsr/errors.hpp"
#include "dsr/kernels.hpp"

namespace dsr {
namespace {

double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// [3, S, S, S] channels-first from interleaved per-centroid triples.
Tensor<double> planar(const std::vector<double>& interleaved, std::size_t S) {
    const std::size_t cells = S * S * S;
    Tensor<double> out({3, S, S, S});
    for (std::size_t c = 0; c < cells; ++c)
        for (std::size_t a = 0; a < 3; ++a) out[a * cells + c] = interleaved[3 * c + a];
    return out;
}

void require_cube(const Tensor<double>& t, const char* op) {
    const Shape& s = t.shape();
    if (s.size() != 4 || s[0] != 3 || s[1] != s[2] || s[2] != s[3]) {
        throw DimensionError(std::string(op) + ": expected a [3,S,S,S] velocity tensor, got " + shape_str(s));
    }
}

}  // namespace

void VelocityPointCloud::validate() const {
    if (points.size() != velocities.size()) {
        throw DimensionError("point cloud has " + std::to_string(points.size()) + " points but " +
                             std::to_string(velocities.size()) + " velocities");
    }
    for (std::size_t i = 0; i < points.size(); ++i)
        for (int a = 0; a < 3; ++a)
            if (!std::isfinite(points[i][a]) || !std::isfinite(velocities[i][a]))
                throw NumericError("non-finite entry at cloud point " + std::to_string(i));
}

std::size_t resolution_exponent(std::size_t count) {
    std::size_t t = 0;
    while (count >> (3 * (t + 1))) ++t;
    return t;
}

bool Box::contains(const Vec3& p, double tol) const {
    for (int a = 0; a < 3; ++a)
        if (p[a] < lo[a] - tol || p[a] > hi[a] + tol) return false;
    return true;
}

NeighborhoodPatch epsilon_ball(const VelocityPointCloud& cloud, std::size_t center, double epsilon) {
    if (!(epsilon > 0)) throw ConfigError("epsilon_ball: epsilon must be positive");
    if (center >= cloud.size()) throw UsageError("epsilon_ball: center index out of range");
    NeighborhoodPatch patch;
    patch.center = center;
    patch.epsilon = epsilon;
    const Vec3& c = cloud.points[center];
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        if (k == center || std::sqrt(dist2(cloud.points[k], c)) <= epsilon) patch.members.push_back(k);
    }
    patch.t = resolution_exponent(patch.members.size());
    return patch;
}

VoxelGrid grid_on_box(const Box& box, std::size_t t) {
    VoxelGrid grid;
    grid.box = box;
    grid.t = t;
    const std::size_t S = grid.extent();
    grid.centroids.resize(S * S * S);
    Vec3 step;
    for (int a = 0; a < 3; ++a) step[a] = (box.hi[a] - box.lo[a]) / static_cast<double>(S);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j)
            for (std::size_t k = 0; k < S; ++k) {
                grid.centroids[(i * S + j) * S + k] = {box.lo[0] + (i + 0.5) * step[0], box.lo[1] + (j + 0.5) * step[1],
                                                       box.lo[2] + (k + 0.5) * step[2]};
            }
    return grid;
}

VoxelGrid make_grid(const NeighborhoodPatch& patch, const VelocityPointCloud& cloud) {
    if (patch.members.empty()) throw UsageError("make_grid: empty neighborhood");
    Box box;
    box.lo = box.hi = cloud.points[patch.members.front()];
    for (std::size_t k : patch.members) {
        for (int a = 0; a < 3; ++a) {
            box.lo[a] = std::min(box.lo[a], cloud.points[k][a]);
            box.hi[a] = std::max(box.hi[a], cloud.points[k][a]);
        }
    }
    double max_extent = 0;
    for (int a = 0; a < 3; ++a) max_extent = std::max(max_extent, box.hi[a] - box.lo[a]);
    const double width = max_extent > 0 ? 1e-6 * max_extent : 1.0;
    for (int a = 0; a < 3; ++a) {
        if (box.hi[a] - box.lo[a] <= 0) {
            box.lo[a] -= 0.5 * width;
            box.hi[a] += 0.5 * width;
        }
    }
    return grid_on_box(box, patch.t);
}

VelocityTensor assign_velocities(const NeighborhoodPatch& patch, const VoxelGrid& grid, const VelocityPointCloud& cloud) {
    const std::size_t m = patch.members.size();
    if (m == 0) throw UsageError("assign_velocities: empty neighborhood");
    std::vector<double> pts(3 * m), vel(3 * m), cen(3 * grid.centroids.size()), out(cen.size());
    for (std::size_t i = 0; i < m; ++i)
        for (int a = 0; a < 3; ++a) {
            pts[3 * i + a] = cloud.points[patch.members[i]][a];
            vel[3 * i + a] = cloud.velocities[patch.members[i]][a];
        }
    for (std::size_t c = 0; c < grid.centroids.size(); ++c)
        for (int a = 0; a < 3; ++a) cen[3 * c + a] = grid.centroids[c][a];
    kernels::idw_assign(pts.data(), vel.data(), m, cen.data(), out.data(), grid.centroids.size(), kCoincidenceMm);
    return {grid, planar(out, grid.extent())};
}

VelocityTensor resize_nearest(const VelocityTensor& tensor, std::size_t T) {
    require_cube(tensor.values, "resize_nearest");
    const std::size_t t = tensor.grid.t;
    if (t > T) throw ConfigError("resize_nearest: patch exponent t=" + std::to_string(t) + " exceeds T=" + std::to_string(T));
    if (t == T) return tensor;
    const std::size_t s = tensor.grid.extent(), f = std::size_t{1} << (T - t);
    Tensor<double> out({3, s * f, s * f, s * f});
    kernels::nearest_upsample(tensor.values.ptr(), out.ptr(), kernels::Volume{3, s, s, s}, f);
    return {grid_on_box(tensor.grid.box, T), std::move(out)};
}

Tensor<double> degrade_resolution(const Tensor<double>& field, std::size_t level) {
    require_cube(field, "degrade_resolution");
    std::size_t S = field.extent(1);
    if (S % (std::size_t{1} << level) != 0) {
        throw ConfigError("downsampling " + std::to_string(level) + " times needs an extent divisible by 2^" +
                          std::to_string(level) + ", got " + std::to_string(S));
    }
    Tensor<double> cur = field;
    for (std::size_t l = 0; l < level; ++l) {
        Tensor<double> next({3, S / 2, S / 2, S / 2});
        kernels::avg_pool2(cur.ptr(), next.ptr(), kernels::Volume{3, S, S, S});
        cur = std::move(next);
        S /= 2;
    }
    if (level == 0) return cur;
    const std::size_t f = std::size_t{1} << level;
    Tensor<double> out(field.shape());
    kernels::nearest_upsample(cur.ptr(), out.ptr(), kernels::Volume{3, S, S, S}, f);
    return out;
}

std::vector<PatchPair> downsample_pyramid(const Tensor<double>& target, std::size_t L) {
    require_cube(target, "downsample_pyramid");
    std::vector<PatchPair> pairs;
    for (std::size_t l = 1; l <= L; ++l) {
        pairs.push_back({degrade_resolution(target, l), target, l, "level" + std::to_string(l)});
    }
    return pairs;
}

VelocityPointCloud synth_flow(const TubeGeometry& geo, double spacing, double u_max, std::uint64_t seed) {
    if (!(geo.radius > 0)) throw ConfigError("synth_flow: radius must be positive");
    if (!(spacing > 0)) throw ConfigError("synth_flow: spacing must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.25 * spacing, 0.25 * spacing);
    const double R = geo.radius;
    VelocityPointCloud cloud;

    Box box;
    if (geo.kind == GeometryKind::straight_tube) {
        box = {{0, -R, -R}, {geo.length, R, R}};
    } else {
        if (!(geo.bend_radius > R)) throw ConfigError("synth_flow: bend radius must exceed the tube radius");
        const double outer = geo.bend_radius + R;
        box = {{-outer, -outer, -R}, {outer, outer, R}};
    }
    const auto count = [&](int a) { return static_cast<long>(std::floor((box.hi[a] - box.lo[a]) / spacing)) + 1; };
    const long nx = count(0), ny = count(1), nz = count(2);
    for (long i = 0; i < nx; ++i)
        for (long j = 0; j < ny; ++j)
            for (long k = 0; k < nz; ++k) {
                Vec3 p{box.lo[0] + i * spacing + jitter(rng), box.lo[1] + j * spacing + jitter(rng),
                       box.lo[2] + k * spacing + jitter(rng)};
                double r = 0;
                Vec3 axis{1, 0, 0};
                if (geo.kind == GeometryKind::straight_tube) {
                    if (p[0] < 0 || p[0] > geo.length) continue;
                    r = std::hypot(p[1], p[2]);
                } else {
                    const double phi = std::atan2(p[1], p[0]);
                    if (phi < 0 || phi > geo.angle) continue;
                    r = std::hypot(std::hypot(p[0], p[1]) - geo.bend_radius, p[2]);
                    axis = {-std::sin(phi), std::cos(phi), 0};
                }
                if (r > R) continue;
                const double u = poiseuille_speed(r, R, u_max);
                cloud.points.push_back(p);
                cloud.velocities.push_back({u * axis[0], u * axis[1], u * axis[2]});
            }
    return cloud;
}

double BiasField::at(const Vec3& p) const {
    return base + amplitude * std::sin(2.0 * std::numbers::pi * (p[0] + p[1] + p[2]) / wavelength);
}

VelocityPointCloud degrade_to_4df(const VelocityPointCloud& cloud, double sigma_v, const BiasField& bias,
                                  std::uint64_t seed) {
    if (sigma_v < 0) throw ConfigError("degrade_to_4df: sigma_v must be >= 0");
    VelocityPointCloud out = cloud;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double b = bias.at(out.points[i]);
        for (int a = 0; a < 3; ++a) {
            const double z = noise(rng);
            out.velocities[i][a] = b * out.velocities[i][a] + (sigma_v > 0 ? sigma_v * z : 0.0);
        }
    }
    return out;
}

std::vector<NeighborhoodPatch> partition_geometry(const VelocityPointCloud& cloud, double epsilon, double spacing,
                                                  std::uint64_t seed) {
    if (!(spacing > 0)) throw ConfigError("partition_geometry: spacing must be positive");
    if (!(epsilon > 0)) throw ConfigError("partition_geometry: epsilon must be positive");
    const std::size_t n = cloud.size();
    if (n == 0) return {};
    const double radius = std::min(spacing, epsilon);
    std::mt19937_64 rng(seed);
    std::size_t next = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> centers;
    while (true) {
        centers.push_back(next);
        const Vec3& c = cloud.points[next];
        double far = -1;
        for (std::size_t k = 0; k < n; ++k) {
            nearest[k] = std::min(nearest[k], std::sqrt(dist2(cloud.points[k], c)));
            if (nearest[k] > far) {
                far = nearest[k];
                next = k;
            }
        }
        if (far <= radius) break;
    }
    std::vector<NeighborhoodPatch> patches;
    patches.reserve(centers.size());
    for (std::size_t c : centers) patches.push_back(epsilon_ball(cloud, c, epsilon));
    return patches;
}

double calibrate_epsilon(const VelocityPointCloud& cloud, std::size_t T, std::uint64_t seed, std::size_t sample_centers) {
    const std::size_t n = cloud.size();
    if (n == 0) throw UsageError("calibrate_epsilon: empty cloud");
    const double goal = std::ldexp(1.0, static_cast<int>(3 * T));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::vector<double>> dists(std::min(sample_centers, n));
    double hi = 0;
    for (auto& row : dists) {
        const Vec3& c = cloud.points[pick(rng)];
        row.resize(n);
        for (std::size_t k = 0; k < n; ++k) row[k] = std::sqrt(dist2(cloud.points[k], c));
        std::sort(row.begin(), row.end());
        hi = std::max(hi, row.back());
    }
    auto median_count = [&](double eps) {
        std::vector<double> counts;
        for (const auto& row : dists)
            counts.push_back(static_cast<double>(std::upper_bound(row.begin(), row.end(), eps) - row.begin()));
        std::nth_element(counts.begin(), counts.begin() + counts.size() / 2, counts.end());
        return counts[counts.size() / 2];
    };
    double lo = 0;
    hi = std::max(hi, 1e-9);
    if (median_count(hi) < goal) return hi;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (median_count(mid) < goal ? lo : hi) = mid;
    }
    return hi;
}

VelocityTensor voxelize_patch(const NeighborhoodPatch& patch, const VelocityPointCloud& cloud, std::size_t T) {
    NeighborhoodPatch p = patch;
    p.t = std::min(p.t, T);
    return resize_nearest(assign_velocities(p, make_grid(p, cloud), cloud), T);
}

void write_cloud_csv(const std::filesystem::path& path, const VelocityPointCloud& cloud) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "x,y,z,vx,vy,vz\n";
    out.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const auto& v = cloud.velocities[i];
        out << p[0] << ',' << p[1] << ',' << p[2] << ',' << v[0] << ',' << v[1] << ',' << v[2] << '\n';
    }
}

VelocityPointCloud read_cloud_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("x,y,z,vx,vy,vz", 0) != 0) {
        throw ConfigError(path.string() + ": expected header x,y,z,vx,vy,vz");
    }
    VelocityPointCloud cloud;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::array<double, 6> v{};
        std::stringstream ss(line);
        std::string cell;
        for (int c = 0; c < 6; ++c) {
            if (!std::getline(ss, cell, ',')) throw ConfigError(path.string() + ": short row " + std::to_string(row));
            try {
                v[c] = std::stod(cell);
            } catch (const std::exception&) {
                throw ConfigError(path.string() + ": bad number on row " + std::to_string(row));
            }
        }
        cloud.points.push_back({v[0], v[1], v[2]});
        cloud.velocities.push_back({v[3], v[4], v[5]});
    }
    cloud.validate();
    return cloud;
}

}  // namespace dsr
