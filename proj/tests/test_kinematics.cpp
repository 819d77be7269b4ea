#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "detservo/config.hpp"
#include "detservo/kinematics.hpp"

using namespace detservo;
using namespace detservo::kinematics;

namespace {

// Independent homogeneous-matrix evaluation of the chain.
Mat4 fk_oracle(const KinematicChain& chain, const JointConfig& q) {
  Mat4 t = Mat4::Identity();
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[i];
    Mat4 origin = Mat4::Identity();
    origin.topLeftCorner<3, 3>() = j.origin.rotation;
    origin.topRightCorner<3, 1>() = j.origin.translation;
    Mat4 rot = Mat4::Identity();
    rot.topLeftCorner<3, 3>() = Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], j.axis).toRotationMatrix();
    t = t * origin * rot;
  }
  Mat4 flange = Mat4::Identity();
  flange.topLeftCorner<3, 3>() = chain.flange().rotation;
  flange.topRightCorner<3, 1>() = chain.flange().translation;
  return t * flange;
}

JointConfig random_config(const KinematicChain& chain, std::mt19937_64& rng, double margin = 0.05) {
  JointConfig q(chain.dof());
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[i];
    std::uniform_real_distribution<double> u(j.lower + margin, j.upper - margin);
    q[static_cast<Eigen::Index>(i)] = u(rng);
  }
  return q;
}

KinematicChain arm() { return default_config().rig.arm; }

}  // namespace

TEST(Geometry, RotationLogInvertsAxisAngle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double angle : {0.0, 1e-9, 0.3, 2.0, M_PI - 1e-7, M_PI}) {
    Vec3 axis(u(rng), u(rng), u(rng));
    axis.normalize();
    const Mat3 r = axis_angle(axis, angle);
    EXPECT_NEAR((r - Eigen::AngleAxisd(angle, axis).toRotationMatrix()).norm(), 0.0, 1e-14);
    EXPECT_NEAR((axis_angle(rotation_log(r).normalized(), rotation_log(r).norm()) - r).norm(), 0.0, 1e-9)
        << "angle " << angle;
    EXPECT_NEAR(rotation_log(r).norm(), angle, 1e-9);
  }
}

TEST(Geometry, RpyIsExtrinsicXyz) {
  const Vec3 rpy(0.1, -0.2, 0.3);
  const Mat3 expected = (Eigen::AngleAxisd(0.3, Vec3::UnitZ()) * Eigen::AngleAxisd(-0.2, Vec3::UnitY()) *
                         Eigen::AngleAxisd(0.1, Vec3::UnitX()))
                            .toRotationMatrix();
  EXPECT_NEAR((rpy_to_matrix(rpy) - expected).norm(), 0.0, 1e-15);
}

TEST(Geometry, PoseComposeAndInverse) {
  const Pose a = Pose::from_xyz_rpy({0.1, 0.2, 0.3}, {0.4, -0.5, 0.6});
  const Pose b = Pose::from_xyz_rpy({-0.3, 0.0, 0.7}, {-0.1, 0.2, 0.9});
  EXPECT_NEAR(((a * b).matrix() - a.matrix() * b.matrix()).norm(), 0.0, 1e-14);
  EXPECT_NEAR(((a * a.inverse()).matrix() - Mat4::Identity()).norm(), 0.0, 1e-14);
  EXPECT_TRUE(a.is_rigid(1e-12));
}

TEST(Kinematics, ForwardKinematicsMatchesMatrixProduct) {
  const auto chain = arm();
  std::mt19937_64 rng(1);
  for (int n = 0; n < 50; ++n) {
    const JointConfig q = random_config(chain, rng);
    EXPECT_NEAR((forward_kinematics(chain, q).matrix() - fk_oracle(chain, q)).norm(), 0.0, 1e-13);
  }
}

TEST(Kinematics, ZeroConfigurationStacksLinkOffsets) {
  const auto chain = arm();
  const Pose t = forward_kinematics(chain, JointConfig::Zero(7));
  // shoulder (0,-0.2,0.05), then 0.30 + 0.28 + 0.06 straight down
  EXPECT_NEAR((t.translation - Vec3(0.0, -0.2, 0.05 - 0.64)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((t.rotation - Mat3::Identity()).norm(), 0.0, 1e-15);
}

TEST(Kinematics, DimensionMismatchThrows) {
  EXPECT_THROW(forward_kinematics(arm(), JointConfig::Zero(6)), std::invalid_argument);
}

TEST(Kinematics, JacobianMatchesFiniteDifferences) {
  const auto chain = arm();
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  for (int n = 0; n < 20; ++n) {
    const JointConfig q = random_config(chain, rng);
    const Jacobian j = jacobian(chain, q);
    const Pose t0 = forward_kinematics(chain, q);
    Jacobian fd(6, chain.dof());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      JointConfig qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const Pose tp = forward_kinematics(chain, qp), tm = forward_kinematics(chain, qm);
      fd.block<3, 1>(0, i) = (tp.translation - tm.translation) / (2 * h);
      fd.block<3, 1>(3, i) = rotation_log(tp.rotation * tm.rotation.transpose()) / (2 * h);
    }
    (void)t0;
    EXPECT_LT((j - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(Kinematics, ConstructorValidates) {
  RevoluteJoint bad{"j", Pose::identity(), Vec3(1.0, 1.0, 0.0), -1.0, 1.0};
  EXPECT_THROW(KinematicChain({bad}), std::invalid_argument);
  RevoluteJoint empty{"j", Pose::identity(), Vec3::UnitZ(), 1.0, 1.0};
  EXPECT_THROW(KinematicChain({empty}), std::invalid_argument);
}

TEST(Kinematics, ConcatenationComposesEndFrames) {
  const RevoluteJoint a0{"a0", Pose::from_translation({0.0, 0.0, 0.1}), Vec3::UnitZ(), -2.0, 2.0};
  const RevoluteJoint a1{"a1", Pose::from_translation({0.2, 0.0, 0.0}), Vec3::UnitY(), -2.0, 2.0};
  const RevoluteJoint b0{"b0", Pose::from_xyz_rpy({0.0, 0.1, 0.0}, {0.3, 0.0, 0.0}), Vec3::UnitX(), -2.0, 2.0};
  const KinematicChain a({a0, a1}, Pose::from_translation({0.1, 0.0, 0.0}));
  const KinematicChain b({b0}, Pose::from_translation({0.0, 0.0, 0.05}));
  const auto ab = KinematicChain::concatenate(a, b);
  ASSERT_EQ(ab.dof(), 3u);
  JointConfig qa(2), qb(1), q(3);
  qa << 0.4, -0.7;
  qb << 1.1;
  q << 0.4, -0.7, 1.1;
  const Mat4 expected = forward_kinematics(a, qa).matrix() * forward_kinematics(b, qb).matrix();
  EXPECT_NEAR((forward_kinematics(ab, q).matrix() - expected).norm(), 0.0, 1e-14);
}

TEST(Kinematics, ClampAndBounds) {
  const auto chain = arm();
  JointConfig q = JointConfig::Constant(7, 5.0);
  EXPECT_FALSE(chain.within_bounds(q));
  const JointConfig c = chain.clamp(q);
  EXPECT_TRUE(chain.within_bounds(c));
  EXPECT_DOUBLE_EQ(c[3], 0.0);  // elbow upper bound
}

TEST(InverseKinematics, PositionRoundTrip) {
  const auto chain = arm();
  const JointConfig home = default_config().rig.arm_home;
  std::mt19937_64 rng(3);
  int solved = 0;
  for (int n = 0; n < 40; ++n) {
    JointConfig q = home;
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] += std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
    q = chain.clamp(q);
    const Vec3 target = forward_kinematics(chain, q).translation;
    const IkResult r = solve_ik(chain, target, home);
    EXPECT_TRUE(chain.within_bounds(r.q));
    if (r.converged) {
      ++solved;
      EXPECT_LT((forward_kinematics(chain, r.q).translation - target).norm(), 1e-8);
    }
  }
  EXPECT_EQ(solved, 40);
}

TEST(InverseKinematics, PoseRoundTripHoldsOrientation) {
  const auto chain = arm();
  const JointConfig home = default_config().rig.arm_home;
  std::mt19937_64 rng(4);
  for (int n = 0; n < 20; ++n) {
    JointConfig q = home;
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    q = chain.clamp(q);
    const Pose target = forward_kinematics(chain, q);
    const IkResult r = solve_ik(chain, target, home, {1e-14, 200, IkObjective::kPose, 0.1});
    ASSERT_TRUE(r.converged);
    const Pose got = forward_kinematics(chain, r.q);
    EXPECT_LT((got.translation - target.translation).norm(), 1e-8);
    EXPECT_LT(rotation_log(got.rotation * target.rotation.transpose()).norm(), 1e-7);
  }
}

TEST(InverseKinematics, CostHistoryIsMonotone) {
  const auto chain = arm();
  const JointConfig home = default_config().rig.arm_home;
  const Vec3 target = forward_kinematics(chain, home).translation + Vec3(0.05, 0.03, -0.02);
  const IkResult r = solve_ik(chain, target, home);
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) EXPECT_LE(r.cost_history[i], r.cost_history[i - 1]);
  EXPECT_DOUBLE_EQ(r.residual, std::sqrt(r.cost));
}

TEST(InverseKinematics, UnreachableTargetStopsAtWorkspaceBoundary) {
  const auto chain = arm();
  const Vec3 shoulder(0.0, -0.2, 0.05);
  const Vec3 dir = Vec3(1.0, -0.3, -0.5).normalized();
  const double reach = 0.30 + 0.28 + 0.06;
  const Vec3 target = shoulder + 1.0 * dir;
  const IkResult r = solve_ik(chain, target, default_config().rig.arm_home, {1e-8, 500});
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(chain.within_bounds(r.q));
  EXPECT_NEAR(r.residual, 1.0 - reach, 1e-4);
}

TEST(InverseKinematics, JointLimitsRespected) {
  // A target behind the elbow's reachable half-space forces active bounds.
  const auto chain = arm();
  const JointConfig home = default_config().rig.arm_home;
  const IkResult r = solve_ik(chain, Vec3(-0.1, -0.2, 0.5), home);
  EXPECT_TRUE(chain.within_bounds(r.q));
}

TEST(InverseKinematics, SeedOutsideBoundsThrows) {
  const auto chain = arm();
  EXPECT_THROW(solve_ik(chain, Vec3(0.3, 0.0, 0.0), JointConfig::Constant(7, 3.0)), std::invalid_argument);
}
