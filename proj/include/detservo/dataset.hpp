/**
 * @file dataset.hpp
 * @brief Measurement-group collection in simulation, benchmark subtraction,
 *        target encoding and the binary dataset file.
 *
 * Dataset file layout (little-endian):
 *
 *   offset  size  field
 *   0       8     magic "DSRVDATA"
 *   8       4     u32 format version (1)
 *   12      8     u64 config hash
 *   20      4     u32 image height
 *   24      4     u32 image width
 *   28      4     u32 image channels
 *   32      8     u64 record count
 *   40      ...   records
 *
 * Each record is a u32 payload byte length followed by the payload:
 *   f32[H*W*C] head image, f32[H*W*C] torso image (row-major, channel last),
 *   f64 head yaw, f64 head pitch, f64[3] d_r (meters, torso frame), u32 group id.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "detservo/kinematics.hpp"
#include "detservo/mph.hpp"
#include "detservo/scene.hpp"

namespace detservo::dataset {

class GroupAbortedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfRangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  int groups = 40;
  int points_min = 20;
  int points_max = 20;
  Vec3 screw_nominal{0.36, -0.06, -0.16};
  Vec3 screw_jitter{0.03, 0.03, 0.01};  ///< uniform half-range per axis
  Vec3 grasp_nominal{0.0, 0.0, -0.10};  ///< tool tip in the end-effector frame
  double grasp_jitter = 0.01;           ///< meters per axis
  double grasp_rotation_jitter = 0.1;   ///< radians per axis
  double rotation_error_bound = 5.0 * M_PI / 180.0;
  double head_yaw_range = 0.1;
  double head_pitch_range = 0.1;
  double max_offset = 0.128;  ///< strict upper bound on |d_r|
  int max_retries = 200;

  void validate() const;
};

struct GroupPoint {
  Pose end_effector;
  kinematics::JointConfig joints;
  scene::Observation observation;
};

struct MeasurementGroup {
  std::uint32_t id = 0;
  GroupPoint benchmark;
  std::vector<GroupPoint> points;
  Pose screw;
  Pose grasp;
  Vec3 rotation_error = Vec3::Zero();  ///< roll/pitch/yaw applied to the nominal end-effector rotation
};

struct Sample {
  scene::Observation observation;
  Vec3 d_r = Vec3::Zero();
  std::uint32_t group_id = 0;
  bool operator==(const Sample&) const = default;
};

/// Per-group placement shared by data collection and servo trials.
struct GroupSetup {
  Pose screw;
  Pose grasp;
  Vec3 rotation_error = Vec3::Zero();
  Pose aligned_ee;  ///< end-effector pose with the tool tip on the screw center
  kinematics::JointConfig aligned_joints;
};

/// Random screw placement, grasp and rotational error with a reachable aligned pose.
/// Throws GroupAbortedError after `max_retries` failed draws.
GroupSetup sample_group_setup(const scene::SimRig& rig, const SamplerConfig& sampler, scene::Rng& rng);

/// Offset with its norm drawn uniformly inside a uniformly chosen head interval
/// (capped at `max_offset`) and a uniform direction.
Vec3 sample_offset(const mph::HeadBank& bank, double max_offset, scene::Rng& rng);

/// One benchmark (perfect alignment) plus `n_points` translated data points,
/// end-effector rotation and grasp fixed across the group.
MeasurementGroup collect_group(const scene::SimRig& rig, const SamplerConfig& sampler, const mph::HeadBank& bank,
                               int n_points, scene::Rng& rng, std::uint32_t id = 0);

/// Benchmark subtraction: d_r = p_ee(point) - p_ee(benchmark).
/// Throws IntegrityError if any point's end-effector rotation differs from the benchmark's.
std::vector<Sample> compute_ground_truth(const MeasurementGroup& group);

struct EquivalenceEntry {
  Vec3 tool_displacement = Vec3::Zero();
  Vec3 ee_displacement = Vec3::Zero();
  Vec3 residual = Vec3::Zero();  ///< tool minus end-effector displacement
  double rotation_angle = 0.0;   ///< angle of R_eb * R_ea^T
  bool rotations_equal = false;
};

struct EquivalenceReport {
  std::vector<EquivalenceEntry> entries;
  double max_equal_rotation_residual = 0.0;  ///< over entries with equal rotations
};

/// Compares tool and end-effector displacement for each (a, b) pose pair held
/// with a fixed grasp. Throws std::invalid_argument if the lists differ in length.
EquivalenceReport verify_equivalence(const Pose& grasp, const std::vector<Pose>& poses_a,
                                     const std::vector<Pose>& poses_b, double rotation_tol = 1e-12);

/// d_o(h) = clip(d_r / mu_h, -3, 3) per component; con_o one-hot on the head
/// whose interval holds |d_r|. Throws OutOfRangeError when |d_r| >= bank range.
mph::EncodedTarget encode_targets(const Vec3& d_r, const mph::HeadBank& bank);

/// Generates `sampler.groups` groups; group g draws from its own stream of `seed`.
std::vector<MeasurementGroup> generate_groups(const scene::SimRig& rig, const SamplerConfig& sampler,
                                              const mph::HeadBank& bank, std::uint64_t seed);

struct DatasetHeader {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
};

struct DatasetFile {
  DatasetHeader header;
  std::vector<Sample> samples;
};

/// Throws std::runtime_error on I/O failure or inconsistent image shapes.
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples,
                   std::uint64_t config_hash);
/// Throws std::runtime_error on bad magic, unsupported version or truncation.
DatasetFile read_dataset(const std::filesystem::path& path);

}  // namespace detservo::dataset
