#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "demloop/canonicalize.hpp"
#include "demloop/geometry.hpp"
#include "demloop/ingest.hpp"
#include "demloop/util.hpp"

using namespace demloop;

namespace {

/// Regular grid on plane n.p + d = 0 over [-half, half]^2 in the plane frame.
PointCloud plane_grid(const Vec3& normal, double d, double half, int per_side) {
    const Vec3 n = normal.normalized();
    const RotationMatrix to_plane = rotation_between(Vec3::UnitZ(), n);
    PointCloud cloud;
    for (int i = 0; i < per_side; ++i) {
        for (int j = 0; j < per_side; ++j) {
            const double x = -half + 2.0 * half * i / (per_side - 1);
            const double y = -half + 2.0 * half * j / (per_side - 1);
            // plane passes through -d*n
            cloud.points.push_back(to_plane * Vec3(x, y, 0.0) - d * n);
        }
    }
    return cloud;
}

double angle_between(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

} // namespace

TEST_CASE("default_min_inliers") {
    CHECK(default_min_inliers(10) == 50);
    CHECK(default_min_inliers(499) == 50);
    CHECK(default_min_inliers(2000) == 200);
}

TEST_CASE("coarse RANSAC finds an exact horizontal plane among outliers") {
    PointCloud cloud = plane_grid(Vec3::UnitZ(), 1.8, 10.0, 32); // 1024 pts at z=-1.8
    cloud.points.resize(1000);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ux(-10.0, 10.0), uz(1.0, 5.0);
    for (int i = 0; i < 50; ++i) cloud.points.emplace_back(ux(rng), ux(rng), uz(rng));

    RansacParams params;
    params.inlier_tol = 0.1;
    params.seed = 3;
    const GroundPlane plane = fit_ground_plane_coarse(cloud, params);
    CHECK((plane.normal - Vec3::UnitZ()).norm() < 1e-6);
    CHECK(plane.offset == doctest::Approx(1.8).epsilon(1e-9));
    CHECK(plane.inlier_count == 1000);
    CHECK(plane.inlier_rms < 1e-9);
}

TEST_CASE("coarse RANSAC is deterministic for a fixed seed") {
    PointCloud cloud;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.03);
    std::uniform_real_distribution<double> u(-12.0, 12.0);
    for (int i = 0; i < 800; ++i) cloud.points.emplace_back(u(rng), u(rng), -2.0 + g(rng));
    for (int i = 0; i < 80; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));

    RansacParams params;
    params.seed = 17;
    const GroundPlane a = fit_ground_plane_coarse(cloud, params);
    const GroundPlane b = fit_ground_plane_coarse(cloud, params);
    CHECK(a.normal == b.normal);
    CHECK(a.offset == b.offset);
    CHECK(a.inlier_count == b.inlier_count);
}

TEST_CASE("three points define their plane exactly") {
    PointCloud cloud;
    cloud.points = {Vec3(0, 0, -1), Vec3(1, 0, -1.1), Vec3(0, 1, -1)};
    RansacParams params;
    params.min_inliers = 3;
    params.inlier_tol = 0.01;
    const GroundPlane plane = fit_ground_plane_coarse(cloud, params);
    for (const Vec3& p : cloud.points)
        CHECK(std::abs(plane.normal.dot(p) + plane.offset) < 1e-9);
    CHECK(plane.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(plane.normal.z() > 0.0);
}

TEST_CASE("vertical wall is rejected as no dominant plane") {
    PointCloud cloud;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j)
            cloud.points.emplace_back(0.0, -5.0 + 0.5 * i, -5.0 + 0.5 * j);
    CHECK_THROWS_WITH_AS(fit_ground_plane_coarse(cloud, RansacParams{}),
                         "no dominant plane", Error);
}

TEST_CASE("refine is a fixed point on an exact coarse fit") {
    const PointCloud cloud = plane_grid(Vec3(0.05, -0.02, 1.0), 1.5, 8.0, 25);
    GroundPlane coarse;
    coarse.normal = Vec3(0.05, -0.02, 1.0).normalized();
    coarse.offset = 1.5;
    const GroundPlane fine = refine_plane_fine(cloud, coarse, 0.15);
    CHECK((fine.normal - coarse.normal).norm() < 1e-9);
    CHECK(fine.offset == doctest::Approx(coarse.offset).epsilon(1e-9));
    CHECK(fine.inlier_count == cloud.size());
    CHECK(fine.inlier_rms < 1e-9);
}

TEST_CASE("refine recovers a noiseless tilted plane from a 3-degree-off coarse guess") {
    const Vec3 truth = Vec3(std::sin(deg2rad(5.0)), 0.0, std::cos(deg2rad(5.0)));
    const PointCloud cloud = plane_grid(truth, 2.0, 8.0, 41);
    GroundPlane coarse;
    coarse.normal = roll_rotation(deg2rad(3.0)) * truth;
    coarse.offset = 2.0;
    const GroundPlane fine = refine_plane_fine(cloud, coarse, 0.15);
    CHECK(angle_between(fine.normal, truth) < 1e-6);
    CHECK(fine.offset == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("refine throws on collinear inliers") {
    PointCloud cloud;
    for (int i = 0; i < 30; ++i) cloud.points.emplace_back(0.1 * i, 0.0, 0.0);
    GroundPlane coarse; // z=0 plane captures the whole line
    CHECK_THROWS_AS(refine_plane_fine(cloud, coarse, 0.15), Error);
}

TEST_CASE("coarse-then-fine monotonicity over noisy Monte-Carlo trials") {
    const Vec3 truth = rpy_compose({deg2rad(4.0), deg2rad(-6.0), 0.0}) * Vec3::UnitZ();
    std::size_t fine_better = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(mix_seed(trial));
        std::normal_distribution<double> g(0.0, 0.03);
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        std::uniform_real_distribution<double> band(0.05, 0.149);
        PointCloud cloud;
        const Vec3 ex = truth.unitOrthogonal();
        const Vec3 ey = truth.cross(ex);
        for (int i = 0; i < 600; ++i) {
            Vec3 p = u(rng) * ex + u(rng) * ey - 2.0 * truth + g(rng) * truth;
            // 1% residual outliers still inside the inlier band
            if (i % 100 == 0) p += band(rng) * truth;
            cloud.points.push_back(p);
        }
        RansacParams params;
        params.seed = trial;
        const GroundPlane coarse = fit_ground_plane_coarse(cloud, params);
        const GroundPlane fine = refine_plane_fine(cloud, coarse, params.inlier_tol);
        CHECK(fine.inlier_rms <= coarse.inlier_rms + 1e-12);
        if (angle_between(fine.normal, truth) <= angle_between(coarse.normal, truth))
            ++fine_better;
    }
    // the fine stage must help on the vast majority of trials
    CHECK(fine_better >= 90);
}

TEST_CASE("rp_canonicalize of an already-canonical cloud") {
    const PointCloud cloud = plane_grid(Vec3::UnitZ(), 1.5, 6.0, 15);
    GroundPlane plane;
    plane.normal = Vec3::UnitZ();
    plane.offset = 1.5;
    const CanonicalScan scan = rp_canonicalize(cloud, plane);
    CHECK((scan.r_rp - RotationMatrix::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(scan.z_offset == 1.5);
    REQUIRE(scan.cloud.size() == cloud.size());
    for (const Vec3& p : scan.cloud.points) CHECK(std::abs(p.z()) < 1e-12);
}

TEST_CASE("rp_canonicalize recovers a known roll/pitch perturbation") {
    const double roll = deg2rad(15.0), pitch = deg2rad(-10.0);
    const RotationMatrix perturb = roll_rotation(roll) * pitch_rotation(pitch);
    PointCloud base = plane_grid(Vec3::UnitZ(), 1.8, 8.0, 21);
    base.points.emplace_back(1.0, 2.0, 0.5); // one off-plane landmark
    PointCloud rotated;
    for (const Vec3& p : base.points) rotated.points.push_back(perturb * p);

    GroundPlane plane;
    plane.normal = perturb * Vec3::UnitZ();
    plane.offset = 1.8;
    const CanonicalScan scan = rp_canonicalize(rotated, plane);
    const Rpy rpy = rpy_decompose(scan.r_rp);
    CHECK(rpy.roll == doctest::Approx(-roll).epsilon(1e-9));
    CHECK(rpy.pitch == doctest::Approx(-pitch).epsilon(1e-9));
    CHECK(std::abs(rpy.yaw) < 1e-8);
    // the canonical cloud matches the unrotated one shifted onto the ground
    REQUIRE(scan.cloud.size() == base.points.size());
    for (std::size_t i = 0; i < base.points.size(); ++i) {
        const Vec3 expect = base.points[i] + Vec3(0, 0, 1.8);
        CHECK((scan.cloud.points[i] - expect).norm() < 1e-9);
    }
}

TEST_CASE("rp_canonicalize culls under-ground returns") {
    PointCloud cloud = plane_grid(Vec3::UnitZ(), 2.0, 5.0, 11);
    const std::size_t n_plane = cloud.size();
    cloud.points.emplace_back(0.0, 0.0, -2.6); // 0.6 m below ground, multipath
    cloud.points.emplace_back(1.0, 1.0, -2.1); // 0.1 m below ground, kept
    GroundPlane plane;
    plane.normal = Vec3::UnitZ();
    plane.offset = 2.0;
    const CanonicalScan scan = rp_canonicalize(cloud, plane);
    CHECK(scan.cloud.size() == n_plane + 1);
}

namespace {

CanonicalScan full_canonicalize(const PointCloud& cloud, std::uint64_t seed) {
    RansacParams params;
    params.seed = seed;
    const GroundPlane coarse = fit_ground_plane_coarse(cloud, params);
    const GroundPlane fine = refine_plane_fine(cloud, coarse, params.inlier_tol);
    return rp_canonicalize(cloud, fine);
}

} // namespace

TEST_CASE("canonical scan invariant: refit plane is flat at z=0") {
    SceneSpec spec;
    spec.seed = 7;
    const Scene scene = synth_scene(spec);
    RigidTransform pose;
    pose.rotation = rpy_compose({deg2rad(8.0), deg2rad(-12.0), deg2rad(40.0)});
    pose.translation = Vec3(5.0, -3.0, 6.0);
    SensorModel sensor;
    sensor.noise_sigma = 0.0;
    const PointCloud cloud = synth_scan(scene, pose, sensor);

    const CanonicalScan scan = full_canonicalize(cloud, 11);
    RansacParams params;
    params.seed = 99;
    const GroundPlane coarse = fit_ground_plane_coarse(scan.cloud, params);
    const GroundPlane refit = refine_plane_fine(scan.cloud, coarse, params.inlier_tol);
    CHECK(angle_between(refit.normal, Vec3::UnitZ()) < deg2rad(0.1));
    CHECK(std::abs(refit.offset) < 1e-3);
    CHECK(std::abs(rpy_decompose(scan.r_rp).yaw) < 1e-8);
}

TEST_CASE("canonicalization is invariant to roll/pitch perturbations of the cloud") {
    SceneSpec spec;
    spec.seed = 19;
    const Scene scene = synth_scene(spec);
    RigidTransform pose;
    pose.translation = Vec3(-4.0, 7.0, 6.0);
    SensorModel sensor;
    sensor.noise_sigma = 0.0;
    const PointCloud cloud = synth_scan(scene, pose, sensor);
    const CanonicalScan ref = full_canonicalize(cloud, 1);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-deg2rad(30.0), deg2rad(30.0));
    for (int trial = 0; trial < 4; ++trial) {
        const RotationMatrix perturb =
            roll_rotation(u(rng)) * pitch_rotation(u(rng));
        PointCloud rotated;
        for (const Vec3& p : cloud.points) rotated.points.push_back(perturb * p);
        const CanonicalScan got = full_canonicalize(rotated, 1);
        REQUIRE(got.cloud.size() == ref.cloud.size());
        for (std::size_t i = 0; i < ref.cloud.size(); i += 37)
            // rough ground bends the fitted plane slightly with viewpoint
            CHECK((got.cloud.points[i] - ref.cloud.points[i]).norm() < 0.05);
    }
}

TEST_CASE("canonicalization is idempotent") {
    SceneSpec spec;
    spec.seed = 29;
    const Scene scene = synth_scene(spec);
    RigidTransform pose;
    pose.rotation = rpy_compose({deg2rad(-10.0), deg2rad(6.0), 0.0});
    pose.translation = Vec3(0.0, 0.0, 6.0);
    SensorModel sensor;
    sensor.noise_sigma = 0.0;
    const PointCloud cloud = synth_scan(scene, pose, sensor);

    const CanonicalScan once = full_canonicalize(cloud, 5);
    const CanonicalScan twice = full_canonicalize(once.cloud, 5);
    CHECK(rotation_angle(twice.r_rp) < deg2rad(0.05));
    CHECK(std::abs(twice.z_offset) < 0.05);
}
