/**
 * @file scene.hpp
 * @brief Synthetic two-camera rig: pinhole head and torso cameras, a tool tip
 *        held by the end-effector and a slotted screw head on the desk.
 *
 * Frames: the torso frame is the world frame (x forward, y left, z up).
 * Camera frames follow the optical convention (z along the optical axis,
 * x to the image right, y to the image bottom). Pixel (row i, col j) has
 * its center at (u, v) = (j, i).
 */
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "detservo/geometry.hpp"
#include "detservo/kinematics.hpp"

namespace detservo::scene {

using Rng = std::mt19937_64;

class BehindCameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfViewError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CameraModel {
  double fx = 100.0;
  double fy = 100.0;
  double cx = 31.5;
  double cy = 31.5;
  int width = 64;
  int height = 64;
  Pose pose;  ///< camera frame in the torso frame

  /// Throws std::invalid_argument if focal lengths or principal point are invalid.
  void validate() const;
};

/// Head camera on a yaw/pitch neck. `camera.pose` is the mount pose at zero
/// joint angles; the axes are expressed in that mount frame.
struct HeadRig {
  CameraModel camera;
  Vec3 yaw_axis = -Vec3::UnitY();
  Vec3 pitch_axis = Vec3::UnitX();
  double yaw_limit = 0.5;
  double pitch_limit = 0.5;
};

struct NoiseConfig {
  double pixel_sigma = 0.01;  ///< Gaussian intensity noise, [0, 0.05]
  int max_distractors = 2;    ///< uniform count in [0, max_distractors], at most 3

  void validate() const;
};

struct Appearance {
  double background = 0.25;
  double screw_intensity = 0.8;
  double slot_intensity = 0.45;
  double tip_intensity = 0.0;
  double screw_radius = 0.012;  ///< meters
  double tip_radius = 0.005;    ///< meters
  double slot_half_width = 0.2;  ///< fraction of the screw radius
  int supersample = 4;
};

struct SceneConfig {
  HeadRig head;
  CameraModel torso;
  Appearance look;
  NoiseConfig noise;
  int channels = 1;
};

struct SceneState {
  Pose end_effector;  ///< torso frame
  Pose grasp;         ///< tool frame in the end-effector frame; the tip is its origin
  Pose screw;         ///< screw frame in torso frame; z is the head normal, x the slot direction
  double head_yaw = 0.0;
  double head_pitch = 0.0;

  Vec3 tool_tip() const { return (end_effector * grasp).translation; }
};

/// Row-major H x W x C intensities in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> data;

  float& at(int row, int col, int ch = 0) { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
  float at(int row, int col, int ch = 0) const { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
  bool operator==(const Image&) const = default;
};

struct Observation {
  Image head_image;
  Image torso_image;
  double head_yaw = 0.0;
  double head_pitch = 0.0;
  bool operator==(const Observation&) const = default;
};

/// Two-joint chain (yaw then pitch) whose base transform is the head mount.
kinematics::KinematicChain head_chain(const HeadRig& rig);

/// Head camera pose in torso frame: mount * Rot(yaw) * Rot(pitch).
/// Throws std::invalid_argument outside the joint limits.
Pose head_camera_pose(const HeadRig& rig, double yaw, double pitch);

/// Pinhole projection of a camera-frame point. Throws BehindCameraError for z <= 0.
Eigen::Vector2d project_camera_point(const CameraModel& camera, const Vec3& p_camera);

/// Pinhole projection of a torso-frame point through `camera.pose`.
Eigen::Vector2d project_point(const CameraModel& camera, const Vec3& p_torso);

/// Head camera with its pose set for the given joint angles.
CameraModel posed_head_camera(const HeadRig& rig, double yaw, double pitch);

/// Pixel-space description of what a camera sees; used by the rasterizer and tests.
struct FeatureLayout {
  Eigen::Vector2d screw_center;
  double screw_radius_px = 0.0;
  Eigen::Vector2d slot_direction;  ///< unit vector in image space
  Eigen::Vector2d tip_center;
  double tip_radius_px = 0.0;
};

/// Throws OutOfViewError if either feature leaves the image.
FeatureLayout layout_features(const CameraModel& camera, const SceneState& state, const Appearance& look);

/// True when both features project inside both images.
bool features_in_view(const SceneState& state, const SceneConfig& config);

/// Rasterizes both camera images. Deterministic given the rng state.
/// Throws OutOfViewError when a feature leaves either image.
Observation render_observation(const SceneState& state, const SceneConfig& config, Rng& rng);

}  // namespace detservo::scene

namespace detservo::scene {

/// Everything the simulator needs: cameras, appearance and the arm holding the tool.
struct SimRig {
  SceneConfig scene;
  kinematics::KinematicChain arm;
  kinematics::JointConfig arm_home;  ///< IK seed for fresh placements
  Mat3 nominal_ee_rotation = Mat3::Identity();
};

}  // namespace detservo::scene
