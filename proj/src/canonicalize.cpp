#include "demloop/canonicalize.hpp"

#include <cmath>
#include <random>

#include "demloop/util.hpp"

namespace demloop {

std::size_t default_min_inliers(std::size_t n_points) {
    return std::max<std::size_t>(50, n_points / 10);
}

namespace {

struct PlaneStats {
    std::size_t inliers = 0;
    double rms = 0.0;
};

PlaneStats score_plane(const PointCloud& cloud, const Vec3& n, double d, double tol,
                       std::size_t stride = 1) {
    PlaneStats s;
    double sq = 0.0;
    for (std::size_t i = 0; i < cloud.points.size(); i += stride) {
        const double r = n.dot(cloud.points[i]) + d;
        if (std::abs(r) <= tol) {
            ++s.inliers;
            sq += r * r;
        }
    }
    s.rms = s.inliers ? std::sqrt(sq / s.inliers) : 0.0;
    return s;
}

/// Flip so the normal is up-facing in sensor coordinates.
void face_up(Vec3& n, double& d) {
    if (n.z() < 0.0) {
        n = -n;
        d = -d;
    }
}

GroundPlane tls_fit(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
    Vec3 centroid = Vec3::Zero();
    for (std::size_t i : idx) centroid += cloud.points[i];
    centroid /= static_cast<double>(idx.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t i : idx) {
        const Vec3 q = cloud.points[i] - centroid;
        cov += q * q.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // rank < 2 means the inliers are collinear
    if (eig.eigenvalues()(1) < 1e-12 * std::max(1.0, eig.eigenvalues()(2)))
        throw Error("degenerate inlier set");
    Vec3 n = eig.eigenvectors().col(0);
    n.normalize();
    double d = -n.dot(centroid);
    face_up(n, d);
    GroundPlane plane;
    plane.normal = n;
    plane.offset = d;
    return plane;
}

std::vector<std::size_t> select_inliers(const PointCloud& cloud, const GroundPlane& plane,
                                        double tol) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (std::abs(plane.normal.dot(cloud.points[i]) + plane.offset) <= tol)
            idx.push_back(i);
    return idx;
}

} // namespace

GroundPlane fit_ground_plane_coarse(const PointCloud& cloud, const RansacParams& params) {
    const std::size_t min_inliers =
        params.min_inliers ? params.min_inliers : default_min_inliers(cloud.size());
    if (cloud.size() < std::max<std::size_t>(3, min_inliers))
        throw Error("no dominant plane", "too few points");

    std::mt19937_64 rng(mix_seed(params.seed));
    std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
    const double cos_max_tilt = std::cos(deg2rad(params.max_tilt_deg));

    // hypotheses are scored on a deterministic stride subsample; the inlier
    // test is per-point, so relative counts between hypotheses are preserved
    const std::size_t stride = std::max<std::size_t>(1, cloud.size() / 15000);
    const std::size_t min_sub = std::max<std::size_t>(3, min_inliers / stride);

    bool found = false;
    Vec3 best_n = Vec3::UnitZ();
    double best_d = 0.0;
    PlaneStats best_stats;

    for (int it = 0; it < params.iters; ++it) {
        const Vec3& a = cloud.points[pick(rng)];
        const Vec3& b = cloud.points[pick(rng)];
        const Vec3& c = cloud.points[pick(rng)];
        Vec3 n = (b - a).cross(c - a);
        const double norm = n.norm();
        if (norm < 1e-9) continue; // collinear sample, resample
        n /= norm;
        double d = -n.dot(a);
        face_up(n, d);
        if (n.z() < cos_max_tilt) continue; // wall-like hypothesis
        const PlaneStats s = score_plane(cloud, n, d, params.inlier_tol, stride);
        if (s.inliers < min_sub) continue;
        if (!found || s.inliers > best_stats.inliers ||
            (s.inliers == best_stats.inliers && s.rms < best_stats.rms)) {
            found = true;
            best_n = n;
            best_d = d;
            best_stats = s;
        }
    }
    if (!found) throw Error("no dominant plane");
    const PlaneStats full = score_plane(cloud, best_n, best_d, params.inlier_tol);
    if (full.inliers < min_inliers) throw Error("no dominant plane");
    GroundPlane plane;
    plane.normal = best_n;
    plane.offset = best_d;
    plane.inlier_count = full.inliers;
    plane.inlier_rms = full.rms;
    return plane;
}

GroundPlane refine_plane_fine(const PointCloud& cloud, const GroundPlane& coarse,
                              double inlier_tol) {
    auto idx = select_inliers(cloud, coarse, inlier_tol);
    if (idx.size() < 3) throw Error("degenerate inlier set", "too few coarse inliers");
    GroundPlane fine = tls_fit(cloud, idx);
    idx = select_inliers(cloud, fine, inlier_tol);
    if (idx.size() < 3) throw Error("degenerate inlier set", "re-selection emptied inliers");
    fine = tls_fit(cloud, idx);

    const PlaneStats s = score_plane(cloud, fine.normal, fine.offset, inlier_tol);
    fine.inlier_count = s.inliers;
    fine.inlier_rms = s.rms;
    return fine;
}

CanonicalScan rp_canonicalize(const PointCloud& cloud, const GroundPlane& plane,
                              double underground_cull) {
    CanonicalScan out;
    out.plane = plane;
    out.r_rp = rotation_between(plane.normal, Vec3::UnitZ());
    out.z_offset = plane.offset;
    out.cloud.points.reserve(cloud.size());
    const bool has_intensity = cloud.intensity.size() == cloud.size();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        Vec3 p = out.r_rp * cloud.points[i];
        p.z() += plane.offset; // ground plane moves to z=0
        if (p.z() < underground_cull) continue;
        out.cloud.points.push_back(p);
        if (has_intensity) out.cloud.intensity.push_back(cloud.intensity[i]);
    }
    return out;
}

} // namespace demloop
