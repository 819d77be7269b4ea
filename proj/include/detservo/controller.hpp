/**
 * @file controller.hpp
 * @brief Two-rate servo loop: a slow estimate tick moves the end-effector
 *        target, a fast control tick integrates a proportional velocity into an
 *        intermediate target and tracks it through inverse kinematics.
 *
 * Time is logical: tick k happens at t = k / control_rate, and every
 * control_rate / estimate_rate ticks starts with an estimate.
 */
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "detservo/dataset.hpp"
#include "detservo/kinematics.hpp"
#include "detservo/model.hpp"
#include "detservo/mph.hpp"
#include "detservo/scene.hpp"

namespace detservo::controller {

struct ServoConfig {
  double estimate_rate = 10.0;  ///< Hz
  double control_rate = 50.0;   ///< Hz
  double kp = 2.0;              ///< 1/s
  double success_tolerance = 0.002;
  double max_duration = 8.0;   ///< s
  double dwell = 0.5;          ///< s of near-stillness required to declare convergence
  double settle_motion = 1e-4;  ///< max end-effector travel over the dwell window, m
  double oracle_noise = 0.0005;  ///< per-axis sigma of the noisy oracle, m
  kinematics::IkOptions ik{1e-12, 100, kinematics::IkObjective::kPose, 0.1};

  /// Throws std::invalid_argument unless kp > 0 and the rates divide evenly.
  void validate() const;
  int ticks_per_estimate() const;
  double dt() const { return 1.0 / control_rate; }
};

struct Estimate {
  Vec3 distance = Vec3::Zero();  ///< tool tip minus target, torso frame
  int head = -1;
};

class Estimator {
 public:
  virtual ~Estimator() = default;
  /// `true_offset` is only consulted by the oracle estimators.
  virtual Estimate estimate(const scene::Observation& obs, const Vec3& true_offset, scene::Rng& rng) = 0;
};

class OracleEstimator : public Estimator {
 public:
  Estimate estimate(const scene::Observation&, const Vec3& true_offset, scene::Rng&) override;
};

class NoisyOracleEstimator : public Estimator {
 public:
  explicit NoisyOracleEstimator(double sigma) : sigma_(sigma) {}
  Estimate estimate(const scene::Observation&, const Vec3& true_offset, scene::Rng& rng) override;

 private:
  double sigma_;
};

class ModelEstimator : public Estimator {
 public:
  ModelEstimator(const model::DistanceEstimator& net, mph::HeadBank bank) : net_(net), bank_(std::move(bank)) {}
  Estimate estimate(const scene::Observation& obs, const Vec3&, scene::Rng&) override;

 private:
  const model::DistanceEstimator& net_;
  mph::HeadBank bank_;
};

/// New end-effector target: current - estimate.
Vec3 update_target(const Vec3& current_ee, const Vec3& estimate);

struct ControlState {
  kinematics::JointConfig joints;
  Vec3 intermediate = Vec3::Zero();
  Mat3 hold_rotation = Mat3::Identity();
};

struct TickResult {
  Vec3 velocity = Vec3::Zero();
  double ik_residual = 0.0;
  bool ik_ok = true;
};

/// One fast tick. On IK failure the joints are held and the intermediate
/// target is reset to the measured position.
TickResult control_tick(const kinematics::KinematicChain& arm, ControlState& state, const Vec3& target,
                        const ServoConfig& cfg);

struct TraceRecord {
  int tick = 0;
  double t = 0.0;
  Vec3 true_offset = Vec3::Zero();
  bool estimated = false;
  Vec3 estimate = Vec3::Zero();
  int head = -1;
  Vec3 velocity = Vec3::Zero();
  kinematics::JointConfig joints;
  double ik_residual = 0.0;
  bool ik_ok = true;
};

struct ServoTrace {
  std::vector<TraceRecord> records;
};

struct TrialSetup {
  scene::SceneState state;
  kinematics::JointConfig joints;
};

/// Random placement (as for a measurement group) with the tool displaced by an
/// offset whose norm lies in [min_offset, max_offset) and both features in view.
TrialSetup sample_trial(const scene::SimRig& rig, const dataset::SamplerConfig& sampler, double min_offset,
                        double max_offset, scene::Rng& rng);

struct TrialResult {
  ServoTrace trace;
  bool success = false;
  bool converged = false;
  double final_error = 0.0;
  double duration = 0.0;
  std::string failure;  ///< empty unless the trial aborted
};

TrialResult run_servo(const scene::SimRig& rig, const TrialSetup& setup, Estimator& estimator,
                      const ServoConfig& cfg, scene::Rng& rng);

/// Columns: tick,t,err_x,err_y,err_z,err_norm,estimated,est_x,est_y,est_z,head,
/// vel_x,vel_y,vel_z,ik_residual,ik_ok,q0..q{n-1}
void write_trace_csv(const std::filesystem::path& path, const ServoTrace& trace);

}  // namespace detservo::controller
