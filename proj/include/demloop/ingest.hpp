#ifndef DEMLOOP_INGEST_HPP
#define DEMLOOP_INGEST_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "demloop/geometry.hpp"

namespace demloop {

struct ScanRecord {
    std::int64_t id = 0;
    PointCloud cloud;
    std::optional<RigidTransform> gt_pose; // world frame
};

/// KITTI-style binary scan: little-endian float32 x,y,z,intensity per point.
/// Non-finite points are dropped. Throws on truncation or an empty result.
PointCloud load_kitti_bin(const std::string& path);
void save_kitti_bin(const std::string& path, const PointCloud& cloud);

/// ASCII PLY with float x,y,z vertex properties.
PointCloud load_ply_ascii(const std::string& path);

/// Pose file: one row-major 3x4 matrix (12 numbers) per line.
std::vector<RigidTransform> load_poses(const std::string& path);
void save_poses(const std::string& path, const std::vector<RigidTransform>& poses);

// ---------------------------------------------------------------------------
// Synthetic scenes: a rough ground field plus boxes (buildings) and
// trunk+canopy trees, ray-castable for desk-scale LiDAR simulation.

struct SceneSpec {
    std::uint64_t seed = 1;
    double extent = 120.0;          // side of the square object-placement area, m
    int n_buildings = 14;
    int n_trees = 30;
    double ground_roughness = 0.2;  // max |height perturbation|, m
    double building_height_min = 6.0;
    double building_height_max = 20.0;
};

struct Box {
    Vec3 lo, hi;
};

struct Cylinder {
    double cx, cy, radius, z0, z1;
};

struct Sphere {
    Vec3 center;
    double radius;
};

struct GroundWave {
    double amp, fx, fy, phase;
};

struct Scene {
    SceneSpec spec;
    std::vector<GroundWave> waves; // sum bounded by spec.ground_roughness
    std::vector<Box> buildings;
    std::vector<Cylinder> trunks;
    std::vector<Sphere> canopies;

    double ground_height(double x, double y) const;
};

Scene synth_scene(const SceneSpec& spec);

struct SensorModel {
    int rings = 64;
    int rays_per_ring = 2160;
    double max_range = 80.0;
    double noise_sigma = 0.0;       // Gaussian range noise, m
    double elev_min_deg = -80.0;
    double elev_max_deg = 5.0;
    std::uint64_t noise_seed = 0;   // mixed with the scene seed
};

/// Ray-cast a scan from `pose` (sensor -> world). Points are returned in the
/// sensor frame; rays that miss everything within max_range produce no point.
/// Throws "sensor underground" when the origin is below the ground field.
PointCloud synth_scan(const Scene& scene, const RigidTransform& pose,
                      const SensorModel& sensor);

} // namespace demloop

#endif
