#include "detservo/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detservo::kinematics {

KinematicChain::KinematicChain(std::vector<RevoluteJoint> joints, Pose flange)
    : joints_(std::move(joints)), flange_(flange) {
  for (const auto& j : joints_) {
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("joint '" + j.name + "' axis is not a unit vector");
    }
    if (!(j.lower < j.upper)) {
      throw std::invalid_argument("joint '" + j.name + "' has lower bound >= upper bound");
    }
    if (!j.origin.is_rigid()) {
      throw std::invalid_argument("joint '" + j.name + "' origin is not a rigid transform");
    }
  }
}

Eigen::VectorXd KinematicChain::lower_bounds() const {
  Eigen::VectorXd lb(dof());
  for (std::size_t i = 0; i < dof(); ++i) lb[i] = joints_[i].lower;
  return lb;
}

Eigen::VectorXd KinematicChain::upper_bounds() const {
  Eigen::VectorXd ub(dof());
  for (std::size_t i = 0; i < dof(); ++i) ub[i] = joints_[i].upper;
  return ub;
}

bool KinematicChain::within_bounds(const JointConfig& q) const {
  if (static_cast<std::size_t>(q.size()) != dof()) return false;
  for (std::size_t i = 0; i < dof(); ++i) {
    if (q[i] < joints_[i].lower || q[i] > joints_[i].upper) return false;
  }
  return true;
}

JointConfig KinematicChain::clamp(const JointConfig& q) const {
  return q.cwiseMax(lower_bounds()).cwiseMin(upper_bounds());
}

KinematicChain KinematicChain::concatenate(const KinematicChain& a, const KinematicChain& b) {
  std::vector<RevoluteJoint> joints = a.joints_;
  Pose carry = a.flange_;
  for (std::size_t i = 0; i < b.joints_.size(); ++i) {
    RevoluteJoint j = b.joints_[i];
    if (i == 0) j.origin = carry * j.origin;
    joints.push_back(j);
  }
  Pose flange = b.joints_.empty() ? carry * b.flange_ : b.flange_;
  return KinematicChain(std::move(joints), flange);
}

namespace {

void check_dims(const KinematicChain& chain, const JointConfig& q) {
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    throw std::invalid_argument("joint vector has " + std::to_string(q.size()) +
                                " entries, chain has " + std::to_string(chain.dof()) + " joints");
  }
}

}  // namespace

Pose forward_kinematics(const KinematicChain& chain, const JointConfig& q) {
  check_dims(chain, q);
  Pose t;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[i];
    t = t * j.origin;
    t.rotation = t.rotation * axis_angle(j.axis, q[i]);
  }
  return t * chain.flange();
}

Jacobian jacobian(const KinematicChain& chain, const JointConfig& q) {
  check_dims(chain, q);
  const std::size_t n = chain.dof();
  std::vector<Vec3> origins(n), axes(n);
  Pose t;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& j = chain.joints()[i];
    t = t * j.origin;
    origins[i] = t.translation;
    axes[i] = t.rotation * j.axis;
    t.rotation = t.rotation * axis_angle(j.axis, q[i]);
  }
  const Vec3 tip = (t * chain.flange()).translation;
  Jacobian jac(6, n);
  for (std::size_t i = 0; i < n; ++i) {
    jac.block<3, 1>(0, i) = axes[i].cross(tip - origins[i]);
    jac.block<3, 1>(3, i) = axes[i];
  }
  return jac;
}

namespace {

struct Residual {
  Eigen::VectorXd r;
  double cost;
};

Residual evaluate(const KinematicChain& chain, const JointConfig& q, const Pose& target,
                  const IkOptions& opt) {
  const Pose p = forward_kinematics(chain, q);
  Residual out;
  if (opt.objective == IkObjective::kPosition) {
    out.r = p.translation - target.translation;
  } else {
    out.r.resize(6);
    out.r.head<3>() = p.translation - target.translation;
    out.r.tail<3>() = opt.orientation_weight * rotation_log(p.rotation * target.rotation.transpose());
  }
  out.cost = out.r.squaredNorm();
  return out;
}

}  // namespace

IkResult solve_ik(const KinematicChain& chain, const Pose& target, const JointConfig& seed,
                  const IkOptions& opt) {
  check_dims(chain, seed);
  if (!chain.within_bounds(seed)) throw std::invalid_argument("IK seed outside joint bounds");

  const std::size_t n = chain.dof();
  const Eigen::VectorXd lb = chain.lower_bounds();
  const Eigen::VectorXd ub = chain.upper_bounds();
  const bool pose = opt.objective == IkObjective::kPose;

  IkResult res;
  res.q = seed;
  Residual cur = evaluate(chain, res.q, target, opt);
  res.cost_history.push_back(cur.cost);

  double lambda = 1e-4;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (cur.cost < 1e-30) break;
    const Jacobian full = jacobian(chain, res.q);
    Eigen::MatrixXd jac = pose ? Eigen::MatrixXd(full) : Eigen::MatrixXd(full.topRows<3>());
    if (pose) jac.bottomRows<3>() *= opt.orientation_weight;
    const Eigen::VectorXd grad = jac.transpose() * cur.r;

    // Joints pinned at a bound with the descent direction pointing outward stay fixed.
    std::vector<int> free_idx;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pinned_low = res.q[i] <= lb[i] && grad[i] > 0.0;
      const bool pinned_high = res.q[i] >= ub[i] && grad[i] < 0.0;
      if (!pinned_low && !pinned_high) free_idx.push_back(static_cast<int>(i));
    }
    if (free_idx.empty()) break;
    Eigen::MatrixXd jf(jac.rows(), free_idx.size());
    for (std::size_t k = 0; k < free_idx.size(); ++k) jf.col(k) = jac.col(free_idx[k]);
    const Eigen::MatrixXd jtj = jf.transpose() * jf;
    const Eigen::VectorXd jtr = jf.transpose() * cur.r;

    bool accepted = false;
    while (lambda < 1e10) {
      Eigen::MatrixXd a = jtj;
      a.diagonal().array() += lambda * (1.0 + jtj.diagonal().array());
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      JointConfig cand = res.q;
      for (std::size_t k = 0; k < free_idx.size(); ++k) cand[free_idx[k]] += step[k];
      cand = chain.clamp(cand);
      Residual next = evaluate(chain, cand, target, opt);
      if (next.cost < cur.cost) {
        const double gain = cur.cost - next.cost;
        res.q = cand;
        cur = std::move(next);
        res.cost_history.push_back(cur.cost);
        lambda = std::max(lambda * 0.2, 1e-12);
        accepted = true;
        if (gain <= 1e-15 * cur.cost) lambda = 1e10;  // stagnated
        break;
      }
      lambda *= 8.0;
    }
    if (!accepted || lambda >= 1e10) {
      ++it;
      break;
    }
  }
  res.iterations = it;
  res.cost = cur.cost;
  res.residual = std::sqrt(cur.cost);
  res.converged = cur.cost <= opt.tolerance;
  return res;
}

IkResult solve_ik(const KinematicChain& chain, const Vec3& target_position, const JointConfig& seed,
                  IkOptions options) {
  options.objective = IkObjective::kPosition;
  return solve_ik(chain, Pose::from_translation(target_position), seed, options);
}

}  // namespace detservo::kinematics
