#include "detservo/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace detservo {

Pose Pose::from_translation(const Vec3& t) {
  Pose p;
  p.translation = t;
  return p;
}

Pose Pose::from_xyz_rpy(const Vec3& xyz, const Vec3& rpy) {
  Pose p;
  p.rotation = rpy_to_matrix(rpy);
  p.translation = xyz;
  return p;
}

Pose Pose::from_matrix(const Mat4& m) {
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool Pose::is_rigid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 k;
  k << 0.0, -axis.z(), axis.y(),
       axis.z(), 0.0, -axis.x(),
       -axis.y(), axis.x(), 0.0;
  return Mat3::Identity() + s * k + (1.0 - c) * (k * k);
}

Vec3 rotation_log(const Mat3& r) {
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double cos_angle = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double sin_angle = 0.5 * skew.norm();
  const double angle = std::atan2(sin_angle, cos_angle);
  if (angle < 1e-7) {
    // first-order: R ~ I + [w]x
    return 0.5 * skew;
  }
  if (angle < M_PI - 1e-3) return angle / (2.0 * sin_angle) * skew;
  // near pi the skew part vanishes; (R + R^T) / 2 - cos I = (1 - cos) a a^T
  const Mat3 b = 0.5 * (r + r.transpose()) - cos_angle * Mat3::Identity();
  int k = 0;
  b.diagonal().maxCoeff(&k);
  Vec3 axis = b.col(k).normalized();
  if (axis.dot(skew) < 0.0) axis = -axis;
  return angle * axis;
}

Mat3 rpy_to_matrix(const Vec3& rpy) {
  return axis_angle(Vec3::UnitZ(), rpy.z()) * axis_angle(Vec3::UnitY(), rpy.y()) *
         axis_angle(Vec3::UnitX(), rpy.x());
}

}  // namespace detservo
