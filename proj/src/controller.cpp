#include "detservo/controller.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>

namespace detservo::controller {

void ServoConfig::validate() const {
  if (!(kp > 0.0)) throw std::invalid_argument("kp must be positive");
  if (!(estimate_rate > 0.0) || !(control_rate > 0.0)) throw std::invalid_argument("rates must be positive");
  const double ratio = control_rate / estimate_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0) {
    throw std::invalid_argument("control_rate must be an integer multiple of estimate_rate");
  }
  if (!(success_tolerance > 0.0)) throw std::invalid_argument("success tolerance must be positive");
  if (max_duration < 0.0 || dwell < 0.0) throw std::invalid_argument("durations must be non-negative");
}

int ServoConfig::ticks_per_estimate() const { return static_cast<int>(std::lround(control_rate / estimate_rate)); }

Estimate OracleEstimator::estimate(const scene::Observation&, const Vec3& true_offset, scene::Rng&) {
  return {true_offset, -1};
}

Estimate NoisyOracleEstimator::estimate(const scene::Observation&, const Vec3& true_offset, scene::Rng& rng) {
  std::normal_distribution<double> n(0.0, sigma_);
  const Vec3 noise(n(rng), n(rng), n(rng));
  return {true_offset + noise, -1};
}

Estimate ModelEstimator::estimate(const scene::Observation& obs, const Vec3&, scene::Rng&) {
  const auto dec = mph::select_and_decode(net_.forward(obs), bank_);
  return {dec.distance, dec.head};
}

Vec3 update_target(const Vec3& current_ee, const Vec3& estimate) { return current_ee - estimate; }

TickResult control_tick(const kinematics::KinematicChain& arm, ControlState& state, const Vec3& target,
                        const ServoConfig& cfg) {
  const Vec3 current = kinematics::forward_kinematics(arm, state.joints).translation;
  TickResult r;
  r.velocity = cfg.kp * (target - current);
  if (r.velocity.isZero(0.0)) return r;
  const Vec3 next = state.intermediate + r.velocity * cfg.dt();
  Pose goal;
  goal.rotation = state.hold_rotation;
  goal.translation = next;
  const auto ik = kinematics::solve_ik(arm, goal, state.joints, cfg.ik);
  r.ik_residual = ik.residual;
  r.ik_ok = ik.converged;
  if (ik.converged) {
    state.joints = ik.q;
    state.intermediate = next;
  } else {
    state.intermediate = current;
  }
  return r;
}

TrialSetup sample_trial(const scene::SimRig& rig, const dataset::SamplerConfig& sampler, double min_offset,
                        double max_offset, scene::Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const kinematics::IkOptions ik_opt{1e-14, 200, kinematics::IkObjective::kPose, 0.1};
  for (int attempt = 0; attempt < sampler.max_retries; ++attempt) {
    const auto g = dataset::sample_group_setup(rig, sampler, rng);
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    if (dir.norm() < 1e-9) continue;
    const double norm = min_offset + (max_offset - min_offset) * unit(rng);
    TrialSetup s;
    s.state = {g.aligned_ee, g.grasp, g.screw, 0.0, 0.0};
    s.state.end_effector.translation += norm * dir.normalized();
    s.state.head_yaw = (2.0 * unit(rng) - 1.0) * sampler.head_yaw_range;
    s.state.head_pitch = (2.0 * unit(rng) - 1.0) * sampler.head_pitch_range;
    if (!scene::features_in_view(s.state, rig.scene)) continue;
    const auto ik = kinematics::solve_ik(rig.arm, s.state.end_effector, g.aligned_joints, ik_opt);
    if (!ik.converged) continue;
    s.joints = ik.q;
    return s;
  }
  throw dataset::GroupAbortedError("could not place a servo trial start in view");
}

TrialResult run_servo(const scene::SimRig& rig, const TrialSetup& setup, Estimator& estimator,
                      const ServoConfig& cfg, scene::Rng& rng) {
  cfg.validate();
  const auto& arm = rig.arm;
  scene::SceneState st = setup.state;
  ControlState cs;
  cs.joints = setup.joints;
  const Pose start = kinematics::forward_kinematics(arm, cs.joints);
  cs.hold_rotation = start.rotation;
  cs.intermediate = start.translation;
  Vec3 target = start.translation;

  const int per_estimate = cfg.ticks_per_estimate();
  const int max_ticks = static_cast<int>(std::floor(cfg.max_duration * cfg.control_rate + 1e-9));
  const int dwell_ticks = static_cast<int>(std::lround(cfg.dwell * cfg.control_rate));
  std::deque<Vec3> history;
  double last_estimate_norm = std::numeric_limits<double>::infinity();

  TrialResult res;
  auto true_offset = [&] {
    st.end_effector = kinematics::forward_kinematics(arm, cs.joints);
    return Vec3(st.tool_tip() - st.screw.translation);
  };

  for (int k = 0; k <= max_ticks; ++k) {
    TraceRecord rec;
    rec.tick = k;
    rec.t = k * cfg.dt();
    rec.true_offset = true_offset();
    if (k % per_estimate == 0) {
      scene::Observation obs;
      try {
        obs = scene::render_observation(st, rig.scene, rng);
      } catch (const scene::OutOfViewError& e) {
        res.failure = std::string("features left the field of view: ") + e.what();
        break;
      }
      const Estimate est = estimator.estimate(obs, rec.true_offset, rng);
      target = update_target(st.end_effector.translation, est.distance);
      last_estimate_norm = est.distance.norm();
      rec.estimated = true;
      rec.estimate = est.distance;
      rec.head = est.head;
    }

    history.push_back(st.end_effector.translation);
    if (static_cast<int>(history.size()) > dwell_ticks + 1) history.pop_front();
    if (static_cast<int>(history.size()) == dwell_ticks + 1 && last_estimate_norm < 0.5 * cfg.success_tolerance) {
      double travel = 0.0;
      for (const auto& p : history) travel = std::max(travel, (p - history.back()).norm());
      if (travel < cfg.settle_motion) {
        rec.joints = cs.joints;
        res.trace.records.push_back(rec);
        res.converged = true;
        break;
      }
    }

    const TickResult tr = control_tick(arm, cs, target, cfg);
    rec.velocity = tr.velocity;
    rec.ik_residual = tr.ik_residual;
    rec.ik_ok = tr.ik_ok;
    rec.joints = cs.joints;
    res.trace.records.push_back(rec);
  }

  res.final_error = true_offset().norm();
  res.duration = res.trace.records.empty() ? 0.0 : res.trace.records.back().t;
  res.success = res.failure.empty() && res.final_error <= cfg.success_tolerance;
  return res;
}

void write_trace_csv(const std::filesystem::path& path, const ServoTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t n = trace.records.empty() ? 0 : static_cast<std::size_t>(trace.records.front().joints.size());
  out << "tick,t,err_x,err_y,err_z,err_norm,estimated,est_x,est_y,est_z,head,vel_x,vel_y,vel_z,ik_residual,ik_ok";
  for (std::size_t i = 0; i < n; ++i) out << ",q" << i;
  out << '\n' << std::setprecision(10);
  for (const auto& r : trace.records) {
    out << r.tick << ',' << r.t << ',' << r.true_offset.x() << ',' << r.true_offset.y() << ',' << r.true_offset.z()
        << ',' << r.true_offset.norm() << ',' << (r.estimated ? 1 : 0) << ',' << r.estimate.x() << ','
        << r.estimate.y() << ',' << r.estimate.z() << ',' << r.head << ',' << r.velocity.x() << ','
        << r.velocity.y() << ',' << r.velocity.z() << ',' << r.ik_residual << ',' << (r.ik_ok ? 1 : 0);
    for (Eigen::Index i = 0; i < r.joints.size(); ++i) out << ',' << r.joints[i];
    out << '\n';
  }
}

}  // namespace detservo::controller
