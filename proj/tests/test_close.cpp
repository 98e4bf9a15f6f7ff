#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "demloop/canonicalize.hpp"
#include "demloop/close.hpp"
#include "demloop/dyt.hpp"
#include "demloop/geometry.hpp"
#include "demloop/ingest.hpp"
#include "demloop/util.hpp"

using namespace demloop;

namespace {

Dem boxes_dem(std::uint64_t seed) {
    DemConfig cfg;
    Dem dem;
    dem.config = cfg;
    const int n = cfg.resolution;
    std::mt19937_64 rng(mix_seed(seed));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double px = u(rng) * 2 * M_PI, py = u(rng) * 2 * M_PI;
    dem.heights.resize(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            dem.heights(r, c) =
                0.15 + 0.05 * std::sin(0.05 * c + px) * std::cos(0.04 * r + py);
    dem.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, true);
    std::uniform_int_distribution<int> pos(30, n - 90);
    std::uniform_int_distribution<int> side(20, 60);
    for (int b = 0; b < 12; ++b) {
        const int r0 = pos(rng), c0 = pos(rng), h = side(rng), w = side(rng);
        const double z = 0.3 + 0.6 * u(rng);
        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c) dem.heights(r, c) = z;
    }
    return dem;
}

/// Two sensor-frame views of the same world points: cloud2 = T(cloud1)
/// with T = inverse(p2) o p1.
struct ViewPair {
    PointCloud cloud1, cloud2;
    RigidTransform gt; // query (1) -> candidate (2)
};

ViewPair make_views(std::uint64_t scene_seed, const RigidTransform& p1,
                    const RigidTransform& p2) {
    SceneSpec spec;
    spec.seed = scene_seed;
    const Scene scene = synth_scene(spec);
    SensorModel sensor;
    sensor.noise_sigma = 0.0;
    const PointCloud base = synth_scan(scene, p1, sensor);

    ViewPair out;
    out.cloud1 = base;
    out.gt = compose(invert(p2), p1);
    out.cloud2.points.reserve(base.size());
    for (const Vec3& p : base.points) out.cloud2.points.push_back(out.gt.apply(p));
    return out;
}

CanonicalScan canonicalize_cloud(const PointCloud& cloud, std::uint64_t seed) {
    RansacParams params;
    params.seed = seed;
    const GroundPlane coarse = fit_ground_plane_coarse(cloud, params);
    const GroundPlane fine = refine_plane_fine(cloud, coarse, params.inlier_tol);
    return rp_canonicalize(cloud, fine);
}

PacketMeta meta_of(const CanonicalScan& scan) {
    PacketMeta meta;
    meta.r_rp = rpy_decompose(scan.r_rp);
    meta.z_offset = scan.z_offset;
    return meta;
}

} // namespace

TEST_CASE("estimate_translation of identical DEMs is zero") {
    const Dem a = boxes_dem(1);
    const TranslationEstimate est = estimate_translation(a, a);
    CHECK(std::abs(est.tx) < 1e-9);
    CHECK(std::abs(est.ty) < 1e-9);
    CHECK(est.peak == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("estimate_translation recovers a constructed integer shift") {
    const Dem a = boxes_dem(2);
    const Dem b = shift_dem(a, 7, -13);
    const TranslationEstimate est = estimate_translation(a, b);
    CHECK(std::abs(est.tx - 0.7) < 0.005);
    CHECK(std::abs(est.ty - (-1.3)) < 0.005);
    CHECK(est.peak > 0.9);
}

TEST_CASE("estimate_translation recovers a metric offset under noise") {
    SceneSpec spec;
    spec.seed = 31;
    const Scene scene = synth_scene(spec);
    SensorModel sensor;
    sensor.noise_sigma = 0.03;
    sensor.noise_seed = 1;
    RigidTransform p1;
    p1.translation = Vec3(0.0, 0.0, 6.0);
    RigidTransform p2 = p1;
    p2.translation += Vec3(2.3, -1.1, 0.0); // gt world offset

    const PointCloud c1 = synth_scan(scene, p1, sensor);
    sensor.noise_seed = 2;
    const PointCloud c2 = synth_scan(scene, p2, sensor);
    const Dem a = rasterize(canonicalize_cloud(c1, 1), DemConfig{});
    const Dem b = rasterize(canonicalize_cloud(c2, 2), DemConfig{});

    // content seen at world point w sits at w - p1 in DEM a and w - p2 in
    // DEM b, so a shifted by p1 - p2 = (-2.3, 1.1) overlays b
    const TranslationEstimate est = estimate_translation(a, b);
    CHECK(std::abs(est.tx - (-2.3)) < 0.15);
    CHECK(std::abs(est.ty - 1.1) < 0.15);
}

TEST_CASE("estimate_translation rejects uncorrelated DEMs") {
    DemConfig cfg;
    Dem a, b;
    a.config = b.config = cfg;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    a.heights.resize(cfg.resolution, cfg.resolution);
    b.heights.resize(cfg.resolution, cfg.resolution);
    for (int r = 0; r < cfg.resolution; ++r)
        for (int c = 0; c < cfg.resolution; ++c) {
            a.heights(r, c) = u(rng);
            b.heights(r, c) = u(rng);
        }
    a.valid = b.valid =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(cfg.resolution,
                                                                     cfg.resolution, true);
    CHECK_THROWS_WITH_AS(estimate_translation(a, b), "unreliable translation", Error);
}

TEST_CASE("compose_relative_pose trivial cases") {
    const PacketMeta id_meta;
    const RigidTransform same = compose_relative_pose(id_meta, id_meta, 0.0, 0.0, 0.0);
    CHECK((same.rotation - RotationMatrix::Identity()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(same.translation.norm() == 0.0);

    const double theta = deg2rad(30.0);
    const RigidTransform yawed = compose_relative_pose(id_meta, id_meta, theta, 1.5, -2.5);
    CHECK((yawed.rotation - yaw_rotation(theta)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(yawed.translation.isApprox(Vec3(1.5, -2.5, 0.0)));

    PacketMeta dz = id_meta;
    dz.z_offset = 6.0;
    PacketMeta dz2 = id_meta;
    dz2.z_offset = 4.5;
    CHECK(compose_relative_pose(dz, dz2, 0.0, 0.0, 0.0)
              .translation.isApprox(Vec3(0.0, 0.0, 1.5)));
}

TEST_CASE("refine_alignment recovers a constructed yaw and shift from a biased start") {
    const Dem a = boxes_dem(6);
    const double theta0 = deg2rad(25.0);
    const Dem b = shift_dem(rotate_dem(a, theta0), 18, -9);

    const AlignmentEstimate al = refine_alignment(a, b, theta0 + deg2rad(5.0));
    CHECK(std::abs(rad2deg(al.theta) - 25.0) < 0.3);
    CHECK(std::abs(al.translation.tx - 1.8) < 0.05);
    CHECK(std::abs(al.translation.ty - (-0.9)) < 0.05);
    CHECK(al.translation.peak > 0.8);
}

TEST_CASE("full 6-DOF closure on a synthetic loop pair") {
    RigidTransform p1;
    p1.rotation = rpy_compose({deg2rad(6.0), deg2rad(4.0), deg2rad(-50.0)});
    p1.translation = Vec3(2.0, 1.0, 6.0);
    RigidTransform p2;
    p2.rotation = rpy_compose({deg2rad(-6.0), deg2rad(-4.0), deg2rad(90.0)});
    p2.translation = Vec3(-1.0, 3.0, 6.5);
    const ViewPair views = make_views(41, p1, p2);

    const CanonicalScan s1 = canonicalize_cloud(views.cloud1, 1);
    const CanonicalScan s2 = canonicalize_cloud(views.cloud2, 2);
    const Dem d1 = rasterize(s1, DemConfig{});
    const Dem d2 = rasterize(s2, DemConfig{});

    const YawEstimate yaw =
        estimate_yaw(encode(d1, CodecConfig{}), encode(d2, CodecConfig{}));
    const AlignmentEstimate al = refine_alignment(d1, d2, yaw.theta);
    const RigidTransform pose = compose_relative_pose(meta_of(s1), meta_of(s2), al.theta,
                                                      al.translation.tx, al.translation.ty);

    const PoseError err = pose_errors(pose, views.gt);
    CHECK(err.te < 0.2);
    CHECK(err.re < 1.5);

    // definitional check: the pose overlays the query cloud on the candidate
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, views.cloud1.size() - 1);
    std::vector<double> residuals;
    for (int s = 0; s < 120; ++s) {
        const Vec3 q = pose.apply(views.cloud1.points[pick(rng)]);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < views.cloud2.size(); i += 7)
            best = std::min(best, (views.cloud2.points[i] - q).norm());
        residuals.push_back(best);
    }
    std::sort(residuals.begin(), residuals.end());
    CHECK(residuals[residuals.size() / 2] < 0.2);

    // consistency: closing the loop in the other direction inverts the pose
    const YawEstimate yaw_r =
        estimate_yaw(encode(d2, CodecConfig{}), encode(d1, CodecConfig{}));
    const AlignmentEstimate al_r = refine_alignment(d2, d1, yaw_r.theta);
    const RigidTransform pose_r = compose_relative_pose(
        meta_of(s2), meta_of(s1), al_r.theta, al_r.translation.tx, al_r.translation.ty);
    const RigidTransform round = compose(pose_r, pose);
    CHECK(round.translation.norm() < 0.3);
    CHECK(rad2deg(rotation_angle(round.rotation)) < 1.0);
}

TEST_CASE("ICP is a fixed point at ground truth on a noiseless pair") {
    RigidTransform p1;
    p1.translation = Vec3(0.0, 0.0, 6.0);
    RigidTransform p2;
    p2.rotation = yaw_rotation(deg2rad(35.0));
    p2.translation = Vec3(1.0, -2.0, 6.2);
    const ViewPair views = make_views(43, p1, p2);

    const IcpResult res = refine_icp(views.cloud1, views.cloud2, views.gt);
    const PoseError err = pose_errors(res.pose, views.gt);
    CHECK(err.te < 1e-4);
    CHECK(err.re < 0.01);
    CHECK(!res.guarded);
}

TEST_CASE("ICP contracts a perturbed initialization") {
    RigidTransform p1;
    p1.translation = Vec3(0.0, 0.0, 6.0);
    RigidTransform p2;
    p2.rotation = yaw_rotation(deg2rad(-20.0));
    p2.translation = Vec3(-1.5, 1.0, 5.8);
    const ViewPair views = make_views(44, p1, p2);

    RigidTransform init = views.gt;
    init.rotation = yaw_rotation(deg2rad(3.0)) * init.rotation;
    init.translation += Vec3(0.21, -0.21, 0.0); // ~0.3 m offset

    const PoseError before = pose_errors(init, views.gt);
    const IcpResult res = refine_icp(views.cloud1, views.cloud2, init);
    const PoseError after = pose_errors(res.pose, views.gt);
    CHECK(after.te * 3.0 <= before.te);
    CHECK(after.re * 3.0 <= before.re);

    // the recorded objective never increases
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
        CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-15);
}

TEST_CASE("ICP rejects disjoint clouds") {
    PointCloud a, b;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 500; ++i) {
        a.points.emplace_back(u(rng), u(rng), u(rng));
        b.points.emplace_back(u(rng) + 1000.0, u(rng), u(rng));
    }
    CHECK_THROWS_WITH_AS(refine_icp(a, b, RigidTransform{}), "insufficient overlap", Error);
    CHECK_THROWS_AS(refine_icp(PointCloud{}, b, RigidTransform{}), Error);
}

TEST_CASE("pose_errors basics") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RigidTransform gt;
    gt.rotation = rpy_compose({u(rng), u(rng), u(rng) * 3});
    gt.translation = Vec3(u(rng) * 10, u(rng) * 10, u(rng) * 2);

    const PoseError zero = pose_errors(gt, gt);
    CHECK(zero.te == 0.0);
    // acos near 1 amplifies the matrix-product roundoff into micro-degrees
    CHECK(zero.re < 1e-5);

    RigidTransform shifted = gt;
    shifted.translation += gt.rotation * Vec3(0.3, 0.4, 0.0);
    const PoseError tr = pose_errors(shifted, gt);
    CHECK(tr.te == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(tr.re < 1e-5);

    RigidTransform rotated = gt;
    rotated.rotation = gt.rotation * yaw_rotation(deg2rad(2.0));
    const PoseError ro = pose_errors(rotated, gt);
    CHECK(ro.te < 1e-12);
    CHECK(ro.re == doctest::Approx(2.0).epsilon(1e-9));
}
