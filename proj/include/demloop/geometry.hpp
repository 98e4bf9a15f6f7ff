#ifndef DEMLOOP_GEOMETRY_HPP
#define DEMLOOP_GEOMETRY_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace demloop {

using Vec3 = Eigen::Vector3d;
using RotationMatrix = Eigen::Matrix3d;

/// SE(3) pose. apply(p) = R*p + t.
struct RigidTransform {
    RotationMatrix rotation = RotationMatrix::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    static RigidTransform identity() { return {}; }
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<float> intensity; // empty or same length as points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct Rpy {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

bool is_rotation(const RotationMatrix& r, double tol = 1e-9);

/// Nearest orthonormal matrix with det +1 (polar projection via SVD).
RotationMatrix orthonormalize(const RotationMatrix& r);

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Minimal (yaw-free about `to`) rotation taking unit vector `from` onto `to`.
/// Throws "degenerate normal flip" for near-antiparallel inputs.
RotationMatrix rotation_between(const Vec3& from, const Vec3& to);

RotationMatrix yaw_rotation(double theta);
RotationMatrix pitch_rotation(double theta);
RotationMatrix roll_rotation(double theta);

/// Decompose r = Rz(yaw)*Ry(pitch)*Rx(roll), pitch in [-pi/2, pi/2].
/// Throws "gimbal degenerate" near |pitch| = pi/2.
Rpy rpy_decompose(const RotationMatrix& r);

RotationMatrix rpy_compose(const Rpy& rpy);

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

/// Wrap angle to [-pi, pi).
double wrap_angle(double theta);

/// Geodesic angle (radians) of a rotation matrix.
double rotation_angle(const RotationMatrix& r);

} // namespace demloop

#endif
