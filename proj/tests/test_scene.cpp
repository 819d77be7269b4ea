#include <cmath>

#include <gtest/gtest.h>

#include "detservo/config.hpp"
#include "detservo/scene.hpp"

using namespace detservo;
using namespace detservo::scene;

namespace {

SceneState state_with_offset(const ExperimentConfig& c, const Vec3& offset) {
  SceneState s;
  s.screw = Pose::from_translation(c.sampler.screw_nominal);
  s.grasp = Pose::from_translation(c.sampler.grasp_nominal);
  s.end_effector.rotation = c.rig.nominal_ee_rotation;
  s.end_effector.translation = s.screw.translation + offset - s.end_effector.rotation * s.grasp.translation;
  return s;
}

SceneConfig clean_scene() {
  SceneConfig sc = default_config().rig.scene;
  sc.noise.pixel_sigma = 0.0;
  sc.noise.max_distractors = 0;
  return sc;
}

// Intensity-weighted centroid of |image - background| over a window.
Eigen::Vector2d centroid(const Image& img, double background, const Eigen::Vector2d& around, double radius) {
  double w = 0.0;
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      if ((Eigen::Vector2d(c, r) - around).norm() > radius) continue;
      const double d = std::abs(img.at(r, c) - background);
      acc += d * Eigen::Vector2d(c, r);
      w += d;
    }
  }
  return acc / w;
}

}  // namespace

TEST(Projection, PinholeCases) {
  CameraModel cam;
  cam.fx = 100.0;
  cam.fy = 120.0;
  cam.cx = 31.5;
  cam.cy = 30.0;
  const auto a = project_camera_point(cam, {0.0, 0.0, 2.0});
  EXPECT_DOUBLE_EQ(a.x(), 31.5);
  EXPECT_DOUBLE_EQ(a.y(), 30.0);
  const auto b = project_camera_point(cam, {0.1, -0.05, 0.5});
  EXPECT_DOUBLE_EQ(b.x(), 100.0 * 0.2 + 31.5);
  EXPECT_DOUBLE_EQ(b.y(), 120.0 * -0.1 + 30.0);
  EXPECT_THROW(project_camera_point(cam, {0.0, 0.0, 0.0}), BehindCameraError);
  EXPECT_THROW(project_camera_point(cam, {0.1, 0.0, -1.0}), BehindCameraError);
}

TEST(Projection, ThroughCameraPose) {
  CameraModel cam;
  cam.fx = cam.fy = 80.0;
  cam.cx = cam.cy = 31.5;
  cam.pose = Pose::from_xyz_rpy({1.0, 2.0, 3.0}, {0.0, 0.0, M_PI / 2});
  // camera x axis is torso y; a point 1 m along camera z (torso z) and 0.1 m along torso y
  const auto p = project_point(cam, Vec3(1.0, 2.1, 4.0));
  EXPECT_NEAR(p.x(), 31.5 + 8.0, 1e-12);
  EXPECT_NEAR(p.y(), 31.5, 1e-12);
}

TEST(HeadRig, PoseMatchesTwoJointChain) {
  const HeadRig rig = default_config().rig.scene.head;
  const auto chain = head_chain(rig);
  ASSERT_EQ(chain.dof(), 2u);
  for (double yaw : {-0.4, 0.0, 0.25}) {
    for (double pitch : {-0.3, 0.1, 0.45}) {
      Eigen::VectorXd q(2);
      q << yaw, pitch;
      EXPECT_NEAR((head_camera_pose(rig, yaw, pitch).matrix() - kinematics::forward_kinematics(chain, q).matrix())
                      .norm(),
                  0.0, 1e-14);
    }
  }
  EXPECT_THROW(head_camera_pose(rig, 0.6, 0.0), std::invalid_argument);
  EXPECT_THROW(head_camera_pose(rig, 0.0, -0.6), std::invalid_argument);
}

TEST(Render, ShapesAndRange) {
  const auto c = default_config();
  Rng rng(3);
  const auto obs = render_observation(state_with_offset(c, {0.02, 0.0, 0.01}), c.rig.scene, rng);
  EXPECT_EQ(obs.head_image.height, 64);
  EXPECT_EQ(obs.head_image.width, 64);
  EXPECT_EQ(obs.head_image.data.size(), 64u * 64u);
  EXPECT_EQ(obs.torso_image.data.size(), 64u * 64u);
  for (float v : obs.head_image.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Render, DeterministicGivenSeed) {
  const auto c = default_config();
  const auto s = state_with_offset(c, {-0.03, 0.02, 0.01});
  Rng a(42), b(42), d(43);
  const auto oa = render_observation(s, c.rig.scene, a);
  EXPECT_EQ(oa, render_observation(s, c.rig.scene, b));
  EXPECT_NE(oa, render_observation(s, c.rig.scene, d));
}

TEST(Render, HeadMotionLeavesTorsoImageUnchanged) {
  const auto c = default_config();
  auto s = state_with_offset(c, {0.01, 0.01, 0.0});
  Rng a(5), b(5);
  const auto o1 = render_observation(s, c.rig.scene, a);
  s.head_yaw = 0.05;
  s.head_pitch = -0.04;
  const auto o2 = render_observation(s, c.rig.scene, b);
  EXPECT_EQ(o1.torso_image, o2.torso_image);
  EXPECT_NE(o1.head_image, o2.head_image);
  EXPECT_DOUBLE_EQ(o2.head_yaw, 0.05);
}

TEST(Render, FeatureCentroidsMatchProjection) {
  const auto c = default_config();
  const SceneConfig sc = clean_scene();
  const auto s = state_with_offset(c, {0.05, -0.04, 0.03});
  Rng rng(1);
  const auto obs = render_observation(s, sc, rng);
  const struct {
    const Image* img;
    CameraModel cam;
  } views[] = {{&obs.head_image, posed_head_camera(sc.head, 0.0, 0.0)}, {&obs.torso_image, sc.torso}};
  for (const auto& v : views) {
    const FeatureLayout f = layout_features(v.cam, s, sc.look);
    ASSERT_GT((f.tip_center - f.screw_center).norm(), f.tip_radius_px + f.screw_radius_px + 3.0);
    const auto tip = centroid(*v.img, sc.look.background, f.tip_center, f.tip_radius_px + 1.5);
    EXPECT_LT((tip - f.tip_center).norm(), 0.5);
    const auto screw = centroid(*v.img, sc.look.background, f.screw_center, f.screw_radius_px + 1.5);
    EXPECT_LT((screw - f.screw_center).norm(), 0.5);
  }
}

TEST(Render, NoiseFreeBackgroundIsFlat) {
  const auto c = default_config();
  const SceneConfig sc = clean_scene();
  Rng rng(2);
  const auto obs = render_observation(state_with_offset(c, {0.0, 0.0, 0.03}), sc, rng);
  EXPECT_FLOAT_EQ(obs.torso_image.at(0, 0), static_cast<float>(sc.look.background));
  EXPECT_FLOAT_EQ(obs.head_image.at(63, 63), static_cast<float>(sc.look.background));
}

TEST(Render, OutOfViewThrows) {
  const auto c = default_config();
  Rng rng(1);
  const auto far = state_with_offset(c, {0.0, 0.0, 1.5});
  EXPECT_FALSE(features_in_view(far, c.rig.scene));
  EXPECT_THROW(render_observation(far, c.rig.scene, rng), OutOfViewError);
  EXPECT_TRUE(features_in_view(state_with_offset(c, {0.0, 0.0, 0.01}), c.rig.scene));
}

TEST(NoiseConfig, Validates) {
  NoiseConfig n;
  n.pixel_sigma = 0.06;
  EXPECT_THROW(n.validate(), std::invalid_argument);
  n.pixel_sigma = 0.01;
  n.max_distractors = 4;
  EXPECT_THROW(n.validate(), std::invalid_argument);
}
