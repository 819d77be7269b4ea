#include "detservo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace detservo::scene {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera image size must be positive");
  if (cx < 0.0 || cx > width - 1 || cy < 0.0 || cy > height - 1) {
    throw std::invalid_argument("camera principal point lies outside the image");
  }
}

void NoiseConfig::validate() const {
  if (pixel_sigma < 0.0 || pixel_sigma > 0.05) throw std::invalid_argument("pixel noise sigma must be in [0, 0.05]");
  if (max_distractors < 0 || max_distractors > 3) throw std::invalid_argument("distractor count must be in [0, 3]");
}

kinematics::KinematicChain head_chain(const HeadRig& rig) {
  kinematics::RevoluteJoint yaw{"head_yaw", rig.camera.pose, rig.yaw_axis.normalized(), -rig.yaw_limit, rig.yaw_limit};
  kinematics::RevoluteJoint pitch{"head_pitch", Pose::identity(), rig.pitch_axis.normalized(), -rig.pitch_limit,
                                  rig.pitch_limit};
  return kinematics::KinematicChain({yaw, pitch});
}

Pose head_camera_pose(const HeadRig& rig, double yaw, double pitch) {
  if (std::abs(yaw) > rig.yaw_limit || std::abs(pitch) > rig.pitch_limit) {
    throw std::invalid_argument("head angles outside joint limits");
  }
  Pose out = rig.camera.pose;
  out.rotation = out.rotation * axis_angle(rig.yaw_axis.normalized(), yaw) *
                 axis_angle(rig.pitch_axis.normalized(), pitch);
  return out;
}

CameraModel posed_head_camera(const HeadRig& rig, double yaw, double pitch) {
  CameraModel cam = rig.camera;
  cam.pose = head_camera_pose(rig, yaw, pitch);
  return cam;
}

Eigen::Vector2d project_camera_point(const CameraModel& camera, const Vec3& p) {
  if (!(p.z() > 0.0)) throw BehindCameraError("point has non-positive depth in camera frame");
  return {camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy};
}

Eigen::Vector2d project_point(const CameraModel& camera, const Vec3& p_torso) {
  return project_camera_point(camera, camera.pose.inverse().apply(p_torso));
}

namespace {

bool disc_inside(const CameraModel& cam, const Eigen::Vector2d& c, double r) {
  return c.x() - r >= -0.5 && c.x() + r <= cam.width - 0.5 && c.y() - r >= -0.5 && c.y() + r <= cam.height - 0.5;
}

}  // namespace

FeatureLayout layout_features(const CameraModel& camera, const SceneState& state, const Appearance& look) {
  const Pose to_cam = camera.pose.inverse();
  const Vec3 screw_c = to_cam.apply(state.screw.translation);
  const Vec3 tip_c = to_cam.apply(state.tool_tip());
  FeatureLayout f;
  try {
    f.screw_center = project_camera_point(camera, screw_c);
    f.tip_center = project_camera_point(camera, tip_c);
  } catch (const BehindCameraError&) {
    throw OutOfViewError("feature behind camera");
  }
  f.screw_radius_px = camera.fx * look.screw_radius / screw_c.z();
  f.tip_radius_px = camera.fx * look.tip_radius / tip_c.z();

  const Vec3 slot_end = to_cam.apply(state.screw.apply(Vec3(look.screw_radius, 0.0, 0.0)));
  Eigen::Vector2d dir = Eigen::Vector2d::UnitX();
  if (slot_end.z() > 0.0) {
    const Eigen::Vector2d d = project_camera_point(camera, slot_end) - f.screw_center;
    if (d.norm() > 1e-12) dir = d.normalized();
  }
  f.slot_direction = dir;

  if (!disc_inside(camera, f.screw_center, f.screw_radius_px)) throw OutOfViewError("screw head leaves the image");
  if (!disc_inside(camera, f.tip_center, f.tip_radius_px)) throw OutOfViewError("tool tip leaves the image");
  return f;
}

bool features_in_view(const SceneState& state, const SceneConfig& config) {
  try {
    layout_features(posed_head_camera(config.head, state.head_yaw, state.head_pitch), state, config.look);
    layout_features(config.torso, state, config.look);
  } catch (const OutOfViewError&) {
    return false;
  }
  return true;
}

namespace {

/// Accumulates the coverage-weighted shape color into a grayscale canvas.
template <typename ColorAt>
void rasterize(std::vector<double>& canvas, int width, int height, int ss, double cx, double cy, double extent,
               ColorAt color_at) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - extent)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(cy + extent)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - extent)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(cx + extent)));
  const double inv = 1.0 / (ss * ss);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      double& px = canvas[static_cast<std::size_t>(r) * width + c];
      const double base = px;
      double acc = 0.0;
      for (int a = 0; a < ss; ++a) {
        const double v = r + (a + 0.5) / ss - 0.5;
        for (int b = 0; b < ss; ++b) {
          const double u = c + (b + 0.5) / ss - 0.5;
          double col = 0.0;
          if (color_at(u, v, col)) acc += (col - base) * inv;
        }
      }
      px = base + acc;
    }
  }
}

Image render_camera(const CameraModel& camera, const FeatureLayout& f, const SceneConfig& config, Rng& rng) {
  const auto& look = config.look;
  const int w = camera.width;
  const int h = camera.height;
  const int ss = std::max(1, look.supersample);
  std::vector<double> canvas(static_cast<std::size_t>(w) * h, look.background);

  std::uniform_int_distribution<int> count_dist(0, config.noise.max_distractors);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_distractors = count_dist(rng);
  for (int k = 0; k < n_distractors; ++k) {
    const double ex = unit(rng) * (w - 1);
    const double ey = unit(rng) * (h - 1);
    const double a = 1.5 + 3.5 * unit(rng);
    const double b = 1.5 + 3.5 * unit(rng);
    const double th = unit(rng) * M_PI;
    const double intensity = 0.35 + 0.3 * unit(rng);
    const double ct = std::cos(th), st = std::sin(th);
    rasterize(canvas, w, h, ss, ex, ey, std::max(a, b) + 1.0, [&](double u, double v, double& col) {
      const double du = u - ex, dv = v - ey;
      const double p = (ct * du + st * dv) / a;
      const double q = (-st * du + ct * dv) / b;
      col = intensity;
      return p * p + q * q <= 1.0;
    });
  }

  const double sr = f.screw_radius_px;
  const double slot_hw = look.slot_half_width * sr;
  rasterize(canvas, w, h, ss, f.screw_center.x(), f.screw_center.y(), sr + 1.0, [&](double u, double v, double& col) {
    const Eigen::Vector2d d(u - f.screw_center.x(), v - f.screw_center.y());
    if (d.squaredNorm() > sr * sr) return false;
    const double across = f.slot_direction.x() * d.y() - f.slot_direction.y() * d.x();
    col = std::abs(across) <= slot_hw ? look.slot_intensity : look.screw_intensity;
    return true;
  });

  const double tr = f.tip_radius_px;
  rasterize(canvas, w, h, ss, f.tip_center.x(), f.tip_center.y(), tr + 1.0, [&](double u, double v, double& col) {
    const double du = u - f.tip_center.x(), dv = v - f.tip_center.y();
    col = look.tip_intensity;
    return du * du + dv * dv <= tr * tr;
  });

  Image img;
  img.height = h;
  img.width = w;
  img.channels = config.channels;
  img.data.resize(static_cast<std::size_t>(w) * h * config.channels);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = config.noise.pixel_sigma;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double base = canvas[static_cast<std::size_t>(r) * w + c];
      for (int ch = 0; ch < config.channels; ++ch) {
        const double n = sigma > 0.0 ? sigma * noise(rng) : 0.0;
        img.at(r, c, ch) = static_cast<float>(std::clamp(base + n, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

Observation render_observation(const SceneState& state, const SceneConfig& config, Rng& rng) {
  config.noise.validate();
  const CameraModel head_cam = posed_head_camera(config.head, state.head_yaw, state.head_pitch);
  const FeatureLayout head_f = layout_features(head_cam, state, config.look);
  const FeatureLayout torso_f = layout_features(config.torso, state, config.look);

  // Independent streams keep each camera's image a function of its own geometry.
  Rng head_rng(rng());
  Rng torso_rng(rng());
  Observation obs;
  obs.head_image = render_camera(head_cam, head_f, config, head_rng);
  obs.torso_image = render_camera(config.torso, torso_f, config, torso_rng);
  obs.head_yaw = state.head_yaw;
  obs.head_pitch = state.head_pitch;
  return obs;
}

}  // namespace detservo::scene
