#pragma once

#include <Eigen/Dense>

namespace detservo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid transform: rotation (orthonormal, det +1) and translation in meters.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t);
  /// Fixed-axis roll/pitch/yaw (R = Rz(yaw) * Ry(pitch) * Rx(roll)).
  static Pose from_xyz_rpy(const Vec3& xyz, const Vec3& rpy);
  static Pose from_matrix(const Mat4& m);

  Pose operator*(const Pose& rhs) const;
  Pose inverse() const;
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Mat4 matrix() const;

  /// True when the rotation is orthonormal with determinant +1 within `tol`.
  bool is_rigid(double tol = 1e-9) const;
};

/// Rodrigues rotation about a unit axis.
Mat3 axis_angle(const Vec3& axis, double angle);

/// Rotation vector (axis * angle) of R, angle in [0, pi].
Vec3 rotation_log(const Mat3& r);

Mat3 rpy_to_matrix(const Vec3& rpy);

}  // namespace detservo
