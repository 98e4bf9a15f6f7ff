#include "demloop/geometry.hpp"

#include <cmath>

#include "demloop/util.hpp"

namespace demloop {

bool is_rotation(const RotationMatrix& r, double tol) {
    const double ortho = (r.transpose() * r - RotationMatrix::Identity()).cwiseAbs().maxCoeff();
    return ortho < tol && std::abs(r.determinant() - 1.0) < tol;
}

RotationMatrix orthonormalize(const RotationMatrix& r) {
    Eigen::JacobiSVD<RotationMatrix> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    RotationMatrix u = svd.matrixU();
    RotationMatrix v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return u * v.transpose();
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& t) {
    RotationMatrix rt = t.rotation.transpose();
    return {rt, -(rt * t.translation)};
}

namespace {

/// Ry(pitch)*Rx(roll) taking unit u onto +z; yaw-free by construction.
RotationMatrix align_to_z(const Vec3& u) {
    const double roll = std::atan2(u.y(), u.z());
    const Vec3 v = roll_rotation(roll) * u;
    const double pitch = std::atan2(-v.x(), v.z());
    return pitch_rotation(pitch) * roll_rotation(roll);
}

} // namespace

RotationMatrix rotation_between(const Vec3& from, const Vec3& to) {
    const Vec3 f = from.normalized();
    const Vec3 t = to.normalized();
    // angle > 179.9 deg has no well-conditioned roll/pitch alignment
    if (f.dot(t) < std::cos(deg2rad(179.9)))
        throw Error("degenerate normal flip");
    if ((f - t).norm() < 1e-15) return RotationMatrix::Identity();
    return align_to_z(t).transpose() * align_to_z(f);
}

RotationMatrix yaw_rotation(double theta) {
    RotationMatrix r;
    const double c = std::cos(theta), s = std::sin(theta);
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

RotationMatrix pitch_rotation(double theta) {
    RotationMatrix r;
    const double c = std::cos(theta), s = std::sin(theta);
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

RotationMatrix roll_rotation(double theta) {
    RotationMatrix r;
    const double c = std::cos(theta), s = std::sin(theta);
    r << 1, 0, 0, 0, c, -s, 0, s, c;
    return r;
}

Rpy rpy_decompose(const RotationMatrix& r) {
    const double sp = -r(2, 0);
    if (std::abs(sp) > std::sin(M_PI / 2.0 - 1e-6))
        throw Error("gimbal degenerate");
    Rpy out;
    out.pitch = std::asin(sp);
    out.roll = std::atan2(r(2, 1), r(2, 2));
    out.yaw = std::atan2(r(1, 0), r(0, 0));
    return out;
}

RotationMatrix rpy_compose(const Rpy& rpy) {
    return yaw_rotation(rpy.yaw) * pitch_rotation(rpy.pitch) * roll_rotation(rpy.roll);
}

double wrap_angle(double theta) {
    double t = std::fmod(theta + M_PI, 2.0 * M_PI);
    if (t < 0.0) t += 2.0 * M_PI;
    return t - M_PI;
}

double rotation_angle(const RotationMatrix& r) {
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

} // namespace demloop
