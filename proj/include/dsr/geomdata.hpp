#pragma once

// Geometry-to-tensor pipeline: epsilon-ball neighborhoods, adaptive voxel
// grids, inverse-distance velocity assignment, resizing and the downsampling
// pyramid, plus the analytic flow generator standing in for CFD data.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsr/tensor.hpp"

namespace dsr {

using Vec3 = std::array<double, 3>;

/// Points in mm, velocities in m/s.
struct VelocityPointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> velocities;

    std::size_t size() const { return points.size(); }
    void validate() const;
};

struct NeighborhoodPatch {
    std::size_t center = 0;
    std::vector<std::size_t> members;  // ascending point indices
    double epsilon = 0;
    std::size_t t = 0;
};

/// floor(log2(count) / 3), i.e. the largest t with 2^(3t) <= count.
std::size_t resolution_exponent(std::size_t count);

struct Box {
    Vec3 lo{}, hi{};
    bool contains(const Vec3& p, double tol = 0) const;
};

/// 2^t cells per axis over `box`. Centroid (a, b, c) sits at flat index
/// (a * S + b) * S + c with a along x, b along y, c along z.
struct VoxelGrid {
    Box box;
    std::size_t t = 0;
    std::vector<Vec3> centroids;

    std::size_t extent() const { return std::size_t{1} << t; }
};

/// Velocity patch: values are channels-first, shape [3, S, S, S].
struct VelocityTensor {
    VoxelGrid grid;
    Tensor<double> values;
};

struct PatchPair {
    Tensor<double> input;   // level-l field, pre-upsampled to 2^T
    Tensor<double> target;  // level-0 field
    std::size_t level = 0;
    std::string provenance;
};

NeighborhoodPatch epsilon_ball(const VelocityPointCloud& cloud, std::size_t center, double epsilon);

/// Tight axis-aligned box of the members split into 2^t cells per axis.
/// Degenerate axes are widened to 1e-6 of the largest extent (1 mm when
/// every axis is degenerate).
VoxelGrid make_grid(const NeighborhoodPatch& patch, const VelocityPointCloud& cloud);
VoxelGrid grid_on_box(const Box& box, std::size_t t);

inline constexpr double kCoincidenceMm = 1e-9;

VelocityTensor assign_velocities(const NeighborhoodPatch& patch, const VoxelGrid& grid, const VelocityPointCloud& cloud);

/// Nearest-neighbor replication to 2^T per axis; the grid is re-split on the same box.
VelocityTensor resize_nearest(const VelocityTensor& tensor, std::size_t T);

/// For l = 1..L: input = upsample(avgpool^l(target), 2^l), paired with target.
std::vector<PatchPair> downsample_pyramid(const Tensor<double>& target, std::size_t L);

/// avgpool^level followed by nearest upsampling back to the original extent.
Tensor<double> degrade_resolution(const Tensor<double>& field, std::size_t level);

enum class GeometryKind { straight_tube, torus_segment };

struct TubeGeometry {
    GeometryKind kind = GeometryKind::straight_tube;
    double radius = 2.0;        // mm
    double length = 20.0;       // straight tube length, mm
    double bend_radius = 10.0;  // torus centerline radius, mm
    double angle = 1.5707963267948966;  // torus sweep, rad
};

inline double poiseuille_speed(double r, double R, double u_max) {
    const double q = r / R;
    return q >= 1 ? 0.0 : u_max * (1.0 - q * q);
}

/// Jittered lattice filling the tube interior; Poiseuille axial profile
/// u_max (1 - (r/R)^2) along the local centerline tangent.
VelocityPointCloud synth_flow(const TubeGeometry& geometry, double spacing, double u_max, std::uint64_t seed);

/// Smooth multiplicative bias base + amplitude * sin(2 pi (x + y + z) / wavelength).
struct BiasField {
    double base = 0.9;
    double amplitude = 0.1;
    double wavelength = 20.0;  // mm

    double at(const Vec3& p) const;
};

/// Multiplies by the bias field and adds i.i.d. N(0, sigma_v^2) per component.
VelocityPointCloud degrade_to_4df(const VelocityPointCloud& cloud, double sigma_v, const BiasField& bias,
                                  std::uint64_t seed);

/// Farthest-point sampling of patch centers, continued until every point is
/// within min(spacing, epsilon) of a center, so every point lies in some ball.
std::vector<NeighborhoodPatch> partition_geometry(const VelocityPointCloud& cloud, double epsilon, double spacing,
                                                  std::uint64_t seed);

/// Bisection on epsilon so the median ball size over sampled centers is
/// about 2^(3T).
double calibrate_epsilon(const VelocityPointCloud& cloud, std::size_t T, std::uint64_t seed,
                         std::size_t sample_centers = 32);

/// ball -> grid -> IDW -> resize to 2^T.
VelocityTensor voxelize_patch(const NeighborhoodPatch& patch, const VelocityPointCloud& cloud, std::size_t T);

/// CSV with header x,y,z,vx,vy,vz.
void write_cloud_csv(const std::filesystem::path& path, const VelocityPointCloud& cloud);
VelocityPointCloud read_cloud_csv(const std::filesystem::path& path);

}  // namespace dsr
