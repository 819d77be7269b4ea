/**
 * @file kinematics.hpp
 * @brief Serial revolute chains: forward kinematics, geometric Jacobian and
 *        bound-constrained least-squares inverse kinematics.
 *
 * Each joint frame is reached through a fixed parent-to-joint transform
 * followed by a rotation about the joint axis:
 *   T = origin_0 * Rot(axis_0, q_0) * ... * origin_{n-1} * Rot(axis_{n-1}, q_{n-1}) * flange
 */
#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "detservo/geometry.hpp"

namespace detservo::kinematics {

using JointConfig = Eigen::VectorXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

struct RevoluteJoint {
  std::string name;
  Pose origin;  ///< fixed transform from the previous joint frame
  Vec3 axis = Vec3::UnitZ();
  double lower = -M_PI;
  double upper = M_PI;
};

class KinematicChain {
 public:
  KinematicChain() = default;
  /// Throws std::invalid_argument on non-unit axes or empty bound intervals.
  explicit KinematicChain(std::vector<RevoluteJoint> joints, Pose flange = Pose::identity());

  std::size_t dof() const { return joints_.size(); }
  const std::vector<RevoluteJoint>& joints() const { return joints_; }
  const Pose& flange() const { return flange_; }

  Eigen::VectorXd lower_bounds() const;
  Eigen::VectorXd upper_bounds() const;
  bool within_bounds(const JointConfig& q) const;
  JointConfig clamp(const JointConfig& q) const;

  /// Chain whose end frame is fk(a) composed with fk(b).
  static KinematicChain concatenate(const KinematicChain& a, const KinematicChain& b);

 private:
  std::vector<RevoluteJoint> joints_;
  Pose flange_;
};

/// End-frame pose in the chain base frame. Throws on dimension mismatch.
Pose forward_kinematics(const KinematicChain& chain, const JointConfig& q);

/// Geometric Jacobian: rows 0-2 linear velocity of the end frame origin,
/// rows 3-5 angular velocity, both in the base frame.
Jacobian jacobian(const KinematicChain& chain, const JointConfig& q);

enum class IkObjective { kPosition, kPose };

struct IkOptions {
  double tolerance = 1e-8;  ///< on the squared residual
  int max_iterations = 100;
  IkObjective objective = IkObjective::kPosition;
  /// meters per radian when orientation error enters the residual
  double orientation_weight = 0.1;
};

struct IkResult {
  JointConfig q;
  double cost = 0.0;      ///< squared residual
  double residual = 0.0;  ///< sqrt(cost)
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;  ///< cost after every accepted step
};

/// Projected Levenberg-Marquardt on the squared pose (or position) error with
/// box constraints on the joints. The seed must lie within the bounds. The
/// solve keeps refining past `tolerance`; `converged` reports cost <= tolerance.
IkResult solve_ik(const KinematicChain& chain, const Pose& target, const JointConfig& seed,
                  const IkOptions& options = {});

IkResult solve_ik(const KinematicChain& chain, const Vec3& target_position, const JointConfig& seed,
                  IkOptions options = {});

}  // namespace detservo::kinematics
