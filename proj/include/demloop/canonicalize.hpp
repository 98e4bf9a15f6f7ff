#ifndef DEMLOOP_CANONICALIZE_HPP
#define DEMLOOP_CANONICALIZE_HPP

#include <cstdint>

#include "demloop/geometry.hpp"

namespace demloop {

/// Plane n.p + offset = 0 with up-facing unit normal; `offset` is the height
/// of the sensor origin above the plane along the normal.
struct GroundPlane {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;
    std::size_t inlier_count = 0;
    double inlier_rms = 0.0;
};

struct RansacParams {
    int iters = 500;
    double inlier_tol = 0.15;     // m
    std::size_t min_inliers = 0;  // 0 -> max(50, 10% of points)
    double max_tilt_deg = 45.0;   // reject hypotheses tilted past this from +z
    std::uint64_t seed = 0;
};

struct CanonicalScan {
    PointCloud cloud;        // canonical frame: ground at z=0, sensor at (0,0,z_offset)
    RotationMatrix r_rp = RotationMatrix::Identity(); // yaw-free roll/pitch rotation
    double z_offset = 0.0;
    GroundPlane plane;
};

/// Seeded 3-point RANSAC for the dominant ground plane.
/// Throws "no dominant plane" if no hypothesis reaches min_inliers.
GroundPlane fit_ground_plane_coarse(const PointCloud& cloud, const RansacParams& params);

/// Total-least-squares refit over the coarse inliers, one inlier re-selection,
/// then a final fit. Throws "degenerate inlier set" on rank-deficient inliers.
GroundPlane refine_plane_fine(const PointCloud& cloud, const GroundPlane& coarse,
                              double inlier_tol);

/// Rotate so the plane normal becomes +z, shift the ground to z=0, and cull
/// spurious under-ground returns below `underground_cull` (meters, negative).
CanonicalScan rp_canonicalize(const PointCloud& cloud, const GroundPlane& plane,
                              double underground_cull = -0.3);

std::size_t default_min_inliers(std::size_t n_points);

} // namespace demloop

#endif
