#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "dsr/geomdata.hpp"

using namespace dsr;

namespace {

VelocityPointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent = 3.0) {
    std::uniform_real_distribution<double> u(0, extent), v(-1, 1);
    VelocityPointCloud c;
    for (std::size_t i = 0; i < n; ++i) {
        c.points.push_back({u(rng), u(rng), u(rng)});
        c.velocities.push_back({v(rng), v(rng), v(rng)});
    }
    return c;
}

NeighborhoodPatch all_of(const VelocityPointCloud& c, std::size_t t) {
    NeighborhoodPatch p;
    p.center = 0;
    p.epsilon = 1e9;
    p.t = t;
    for (std::size_t i = 0; i < c.size(); ++i) p.members.push_back(i);
    return p;
}

}  // namespace

TEST_CASE("resolution exponent") {
    CHECK(resolution_exponent(1) == 0);
    CHECK(resolution_exponent(7) == 0);
    CHECK(resolution_exponent(8) == 1);
    CHECK(resolution_exponent(4095) == 3);
    CHECK(resolution_exponent(4096) == 4);
}

TEST_CASE("epsilon ball holds exactly the points within epsilon") {
    std::mt19937_64 rng(1);
    const auto c = random_cloud(rng, 500);
    for (std::size_t center : {0u, 17u, 321u}) {
        const auto b = epsilon_ball(c, center, 0.8);
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < c.size(); ++i) {
            double d = 0;
            for (int a = 0; a < 3; ++a) d += (c.points[i][a] - c.points[center][a]) * (c.points[i][a] - c.points[center][a]);
            if (std::sqrt(d) <= 0.8) want.push_back(i);
        }
        CHECK(b.members == want);
        CHECK(b.t == resolution_exponent(want.size()));
    }
    CHECK_THROWS_AS(epsilon_ball(c, 1000, 0.8), UsageError);
}

TEST_CASE("grid centroids follow the documented index order") {
    const auto g = grid_on_box(Box{{0, 0, 0}, {2, 4, 8}}, 1);
    REQUIRE(g.centroids.size() == 8);
    CHECK(g.centroids[0] == Vec3{0.5, 1, 2});
    CHECK(g.centroids[1] == Vec3{0.5, 1, 6});   // c along z
    CHECK(g.centroids[2] == Vec3{0.5, 3, 2});   // b along y
    CHECK(g.centroids[4] == Vec3{1.5, 1, 2});   // a along x
}

TEST_CASE("idw properties on random patches") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto c = random_cloud(rng, 20 + rng() % 60);
        const auto p = all_of(c, 2);
        const auto grid = make_grid(p, c);
        const auto vt = assign_velocities(p, grid, c);
        const std::size_t cells = grid.centroids.size();
        for (int dir = 0; dir < 4; ++dir) {
            const Vec3 d{u(rng), u(rng), u(rng)};
            double hi = -1e300, lo = 1e300;
            for (const auto& v : c.velocities) {
                const double s = d[0] * v[0] + d[1] * v[1] + d[2] * v[2];
                hi = std::max(hi, s);
                lo = std::min(lo, s);
            }
            for (std::size_t q = 0; q < cells; ++q) {
                const double s = d[0] * vt.values[q] + d[1] * vt.values[cells + q] + d[2] * vt.values[2 * cells + q];
                CHECK(s <= hi + 1e-12);
                CHECK(s >= lo - 1e-12);
            }
        }
        auto shifted = c;
        const Vec3 off{u(rng) * 50, u(rng) * 50, u(rng) * 50};
        for (auto& pt : shifted.points)
            for (int a = 0; a < 3; ++a) pt[a] += off[a];
        const auto vs = assign_velocities(p, make_grid(p, shifted), shifted);
        for (std::size_t i = 0; i < vt.values.size(); ++i) CHECK(std::abs(vs.values[i] - vt.values[i]) < 1e-6);
    }
}

TEST_CASE("a centroid on top of a member inherits its velocity") {
    std::mt19937_64 rng(3);
    auto c = random_cloud(rng, 30);
    const auto p0 = all_of(c, 2);
    const auto grid = make_grid(p0, c);
    c.points.push_back(grid.centroids[21]);
    c.velocities.push_back({0.125, -0.5, 3.0});
    const auto p = all_of(c, 2);
    const auto vt = assign_velocities(p, make_grid(p, c), c);
    const std::size_t cells = 64;
    CHECK(vt.values[21] == 0.125);
    CHECK(vt.values[cells + 21] == -0.5);
    CHECK(vt.values[2 * cells + 21] == 3.0);
}

TEST_CASE("resize, degrade and pyramid") {
    Tensor<double> f({3, 2, 2, 2});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i) / 8.0;
    VelocityTensor vt{grid_on_box(Box{{0, 0, 0}, {1, 1, 1}}, 1), f};
    const auto big = resize_nearest(vt, 3);
    CHECK(big.values.shape() == Shape{3, 8, 8, 8});
    CHECK(big.grid.extent() == 8);
    CHECK(big.values[0] == 0.0);
    CHECK(big.values[511] == f[7]);
    CHECK_THROWS_AS(resize_nearest(big, 2), ConfigError);
    // Blockwise-constant at level 2 survives degradation unchanged.
    CHECK(degrade_resolution(big.values, 2) == big.values);

    const auto pyr = downsample_pyramid(big.values, 3);
    REQUIRE(pyr.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(pyr[l].level == l + 1);
        CHECK(pyr[l].input.shape() == big.values.shape());
        CHECK(pyr[l].target == big.values);
    }
    CHECK_THROWS_AS(downsample_pyramid(big.values, 4), ConfigError);
}

TEST_CASE("synthetic tubes carry a Poiseuille profile") {
    const TubeGeometry tube{GeometryKind::straight_tube, 1.5, 6.0, 0, 0};
    const auto c = synth_flow(tube, 0.3, 1.2, 4);
    REQUIRE(c.size() > 100);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& p = c.points[i];
        const double r = std::hypot(p[1], p[2]);
        CHECK(r <= 1.5);
        CHECK(c.velocities[i][0] == doctest::Approx(poiseuille_speed(r, 1.5, 1.2)));
        CHECK(c.velocities[i][1] == 0.0);
    }
    const TubeGeometry torus{GeometryKind::torus_segment, 1.0, 0, 5.0, 1.0};
    const auto t = synth_flow(torus, 0.3, 1.0, 5);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& p = t.points[i];
        const auto& v = t.velocities[i];
        // Velocity is tangent to the centerline circle: orthogonal to the radial direction.
        CHECK(std::abs(v[0] * p[0] + v[1] * p[1]) < 1e-9 * (1 + std::hypot(p[0], p[1])));
        CHECK(v[2] == 0.0);
    }
    CHECK(synth_flow(tube, 0.3, 1.2, 4).points == c.points);
}

TEST_CASE("degradation applies bias and noise") {
    const TubeGeometry tube{GeometryKind::straight_tube, 2.0, 10.0, 0, 0};
    const auto c = synth_flow(tube, 0.25, 1.0, 6);
    BiasField flat{0.9, 0.0, 20.0};
    const auto d = degrade_to_4df(c, 0.05, flat, 7);
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double e = d.velocities[i][1] - 0.9 * c.velocities[i][1];
        mean += e;
        var += e * e;
    }
    mean /= c.size();
    var = var / c.size() - mean * mean;
    CHECK(std::abs(mean) < 0.005);
    CHECK(std::sqrt(var) == doctest::Approx(0.05).epsilon(0.05));

    // Mean perturbation magnitude against a Monte-Carlo norm of 3 normals
    // (about 1.596 sigma).
    BiasField none{1.0, 0.0, 20.0};
    const auto u = degrade_to_4df(c, 0.05, none, 8);
    double mag = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        double s = 0;
        for (int a = 0; a < 3; ++a) s += std::pow(u.velocities[i][a] - c.velocities[i][a], 2);
        mag += std::sqrt(s);
    }
    mag /= c.size();
    std::mt19937_64 rng(99);
    std::normal_distribution<double> z(0.0, 0.05);
    double mc = 0;
    const int draws = 200000;
    for (int k = 0; k < draws; ++k) {
        const double a = z(rng), b = z(rng), e = z(rng);
        mc += std::sqrt(a * a + b * b + e * e);
    }
    mc /= draws;
    CHECK(mag == doctest::Approx(mc).epsilon(0.03));
    CHECK(degrade_to_4df(c, 0.0, flat, 7).velocities[5][0] == doctest::Approx(0.9 * c.velocities[5][0]));
    CHECK_THROWS_AS(degrade_to_4df(c, -1.0, flat, 7), ConfigError);
}

TEST_CASE("partition covers every point and calibration hits the target size") {
    const TubeGeometry tube{GeometryKind::straight_tube, 1.5, 8.0, 0, 0};
    const auto c = synth_flow(tube, 0.3, 1.0, 8);
    const double eps = calibrate_epsilon(c, 2, 9);
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < c.size(); i += 37) sizes.push_back(epsilon_ball(c, i, eps).members.size());
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes[sizes.size() / 2] >= 32);
    CHECK(sizes[sizes.size() / 2] <= 160);

    const auto patches = partition_geometry(c, eps, eps, 10);
    std::vector<int> hit(c.size(), 0);
    for (const auto& p : patches)
        for (std::size_t m : p.members) hit[m] = 1;
    CHECK(std::count(hit.begin(), hit.end(), 0) == 0);
    CHECK(partition_geometry(c, eps, eps, 10).size() == patches.size());
}

TEST_CASE("voxelize_patch produces 2^T patches") {
    const TubeGeometry tube{GeometryKind::straight_tube, 1.5, 8.0, 0, 0};
    const auto c = synth_flow(tube, 0.3, 1.0, 8);
    const auto p = epsilon_ball(c, 10, 1.2);
    const auto v = voxelize_patch(p, c, 3);
    CHECK(v.values.shape() == Shape{3, 8, 8, 8});
    CHECK(v.values.all_finite());
}

TEST_CASE("cloud csv round trip") {
    std::mt19937_64 rng(11);
    const auto c = random_cloud(rng, 25);
    const auto path = std::filesystem::temp_directory_path() / "dsr_cloud.csv";
    write_cloud_csv(path, c);
    const auto back = read_cloud_csv(path);
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            CHECK(back.points[i][a] == c.points[i][a]);
            CHECK(back.velocities[i][a] == c.velocities[i][a]);
        }
    CHECK_THROWS_AS(read_cloud_csv("/nonexistent/cloud.csv"), MissingArtifactError);
}
