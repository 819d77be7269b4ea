#include "detservo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "detservo/binary_io.hpp"
#include "detservo/hashing.hpp"

namespace detservo::dataset {

void SamplerConfig::validate() const {
  if (groups < 0) throw std::invalid_argument("group count must be non-negative");
  if (points_min < 1 || points_max < points_min) throw std::invalid_argument("invalid points-per-group range");
  if (!(max_offset > 0.0)) throw std::invalid_argument("max_offset must be positive");
  if (rotation_error_bound < 0.0) throw std::invalid_argument("rotation error bound must be non-negative");
  if (max_retries < 1) throw std::invalid_argument("max_retries must be at least 1");
}

namespace {

constexpr char kMagic[8] = {'D', 'S', 'R', 'V', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

const kinematics::IkOptions& placement_ik() {
  static const kinematics::IkOptions opt{1e-14, 200, kinematics::IkObjective::kPose, 0.1};
  return opt;
}

double uniform(scene::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 uniform_box(scene::Rng& rng, const Vec3& half) {
  return {uniform(rng, -half.x(), half.x()), uniform(rng, -half.y(), half.y()), uniform(rng, -half.z(), half.z())};
}

}  // namespace

GroupSetup sample_group_setup(const scene::SimRig& rig, const SamplerConfig& sampler, scene::Rng& rng) {
  for (int attempt = 0; attempt < sampler.max_retries; ++attempt) {
    GroupSetup s;
    s.screw = Pose::from_xyz_rpy(sampler.screw_nominal + uniform_box(rng, sampler.screw_jitter),
                                 Vec3(0.0, 0.0, uniform(rng, -M_PI, M_PI)));
    s.grasp = Pose::from_xyz_rpy(sampler.grasp_nominal + uniform_box(rng, Vec3::Constant(sampler.grasp_jitter)),
                                 uniform_box(rng, Vec3::Constant(sampler.grasp_rotation_jitter)));
    s.rotation_error = uniform_box(rng, Vec3::Constant(sampler.rotation_error_bound));
    s.aligned_ee.rotation = rig.nominal_ee_rotation * rpy_to_matrix(s.rotation_error);
    s.aligned_ee.translation = s.screw.translation - s.aligned_ee.rotation * s.grasp.translation;
    const auto ik = kinematics::solve_ik(rig.arm, s.aligned_ee, rig.arm_home, placement_ik());
    if (!ik.converged) continue;
    s.aligned_joints = ik.q;
    return s;
  }
  throw GroupAbortedError("no reachable screw placement after " + std::to_string(sampler.max_retries) + " draws");
}

Vec3 sample_offset(const mph::HeadBank& bank, double max_offset, scene::Rng& rng) {
  std::vector<std::size_t> usable;
  for (std::size_t h = 0; h < bank.size(); ++h) {
    if (bank[h].lo < max_offset) usable.push_back(h);
  }
  const std::size_t h = usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
  const double hi = std::min(bank[h].hi, max_offset);
  double norm = uniform(rng, bank[h].lo, hi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
  while (dir.norm() < 1e-9) dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
  return norm * dir.normalized();
}

MeasurementGroup collect_group(const scene::SimRig& rig, const SamplerConfig& sampler, const mph::HeadBank& bank,
                               int n_points, scene::Rng& rng, std::uint32_t id) {
  sampler.validate();
  if (n_points < 0) throw std::invalid_argument("n_points must be non-negative");
  MeasurementGroup group;
  group.id = id;

  auto random_head = [&](scene::SceneState& st) {
    st.head_yaw = uniform(rng, -sampler.head_yaw_range, sampler.head_yaw_range);
    st.head_pitch = uniform(rng, -sampler.head_pitch_range, sampler.head_pitch_range);
  };

  bool placed = false;
  for (int attempt = 0; attempt < sampler.max_retries && !placed; ++attempt) {
    const GroupSetup setup = sample_group_setup(rig, sampler, rng);
    scene::SceneState st{setup.aligned_ee, setup.grasp, setup.screw, 0.0, 0.0};
    random_head(st);
    if (!scene::features_in_view(st, rig.scene)) continue;
    group.screw = setup.screw;
    group.grasp = setup.grasp;
    group.rotation_error = setup.rotation_error;
    group.benchmark.end_effector = setup.aligned_ee;
    group.benchmark.joints = setup.aligned_joints;
    group.benchmark.observation = scene::render_observation(st, rig.scene, rng);
    placed = true;
  }
  if (!placed) throw GroupAbortedError("benchmark never landed inside both fields of view");

  const Pose& bench = group.benchmark.end_effector;
  for (int i = 0; i < n_points; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < sampler.max_retries && !ok; ++attempt) {
      const Vec3 offset = sample_offset(bank, sampler.max_offset, rng);
      scene::SceneState st{bench, group.grasp, group.screw, 0.0, 0.0};
      st.end_effector.translation += offset;
      random_head(st);
      if (!scene::features_in_view(st, rig.scene)) continue;
      const auto ik = kinematics::solve_ik(rig.arm, st.end_effector, group.benchmark.joints, placement_ik());
      if (!ik.converged) continue;
      group.points.push_back({st.end_effector, ik.q, scene::render_observation(st, rig.scene, rng)});
      ok = true;
    }
    if (!ok) {
      throw GroupAbortedError("data point " + std::to_string(i) + " of group " + std::to_string(id) +
                              " could not be placed in view");
    }
  }
  return group;
}

std::vector<Sample> compute_ground_truth(const MeasurementGroup& group) {
  const Pose& bench = group.benchmark.end_effector;
  std::vector<Sample> out;
  out.reserve(group.points.size());
  for (std::size_t i = 0; i < group.points.size(); ++i) {
    const Pose& p = group.points[i].end_effector;
    if ((p.rotation - bench.rotation).cwiseAbs().maxCoeff() > 1e-12) {
      throw IntegrityError("group " + std::to_string(group.id) + " point " + std::to_string(i) +
                           ": end-effector rotation differs from the benchmark");
    }
    out.push_back({group.points[i].observation, p.translation - bench.translation, group.id});
  }
  return out;
}

EquivalenceReport verify_equivalence(const Pose& grasp, const std::vector<Pose>& poses_a,
                                     const std::vector<Pose>& poses_b, double rotation_tol) {
  if (poses_a.size() != poses_b.size()) throw std::invalid_argument("pose lists differ in length");
  EquivalenceReport report;
  for (std::size_t i = 0; i < poses_a.size(); ++i) {
    const Pose& ea = poses_a[i];
    const Pose& eb = poses_b[i];
    EquivalenceEntry e;
    e.tool_displacement = (eb * grasp).translation - (ea * grasp).translation;
    e.ee_displacement = eb.translation - ea.translation;
    e.residual = e.tool_displacement - e.ee_displacement;
    e.rotation_angle = rotation_log(eb.rotation * ea.rotation.transpose()).norm();
    e.rotations_equal = (eb.rotation - ea.rotation).cwiseAbs().maxCoeff() <= rotation_tol;
    if (e.rotations_equal) {
      report.max_equal_rotation_residual = std::max(report.max_equal_rotation_residual, e.residual.norm());
    }
    report.entries.push_back(e);
  }
  return report;
}

mph::EncodedTarget encode_targets(const Vec3& d_r, const mph::HeadBank& bank) {
  const double norm = d_r.norm();
  const int head = bank.head_for(norm);
  if (head < 0) {
    throw OutOfRangeError("|d_r| = " + std::to_string(norm) + " m is outside every head interval");
  }
  mph::EncodedTarget t;
  t.head = head;
  t.con_o.assign(bank.size(), 0.0);
  t.con_o[head] = 1.0;
  for (std::size_t h = 0; h < bank.size(); ++h) {
    t.d_o.push_back((d_r / bank[h].mu).cwiseMax(-3.0).cwiseMin(3.0));
  }
  return t;
}

std::vector<MeasurementGroup> generate_groups(const scene::SimRig& rig, const SamplerConfig& sampler,
                                              const mph::HeadBank& bank, std::uint64_t seed) {
  sampler.validate();
  std::vector<MeasurementGroup> groups;
  groups.reserve(sampler.groups);
  for (int g = 0; g < sampler.groups; ++g) {
    scene::Rng rng(mix_seed(seed, static_cast<std::uint64_t>(g)));
    const int n = std::uniform_int_distribution<int>(sampler.points_min, sampler.points_max)(rng);
    groups.push_back(collect_group(rig, sampler, bank, n, rng, static_cast<std::uint32_t>(g)));
  }
  return groups;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples, std::uint64_t config_hash) {
  DatasetHeader h;
  h.config_hash = config_hash;
  if (!samples.empty()) {
    const auto& img = samples.front().observation.head_image;
    h.height = img.height;
    h.width = img.width;
    h.channels = img.channels;
  }
  const std::size_t pixels = static_cast<std::size_t>(h.height) * h.width * h.channels;
  for (const auto& s : samples) {
    for (const auto* img : {&s.observation.head_image, &s.observation.torso_image}) {
      if (static_cast<std::uint32_t>(img->height) != h.height || static_cast<std::uint32_t>(img->width) != h.width ||
          static_cast<std::uint32_t>(img->channels) != h.channels || img->data.size() != pixels) {
        throw std::runtime_error("dataset samples have inconsistent image shapes");
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  binary::put(out, kVersion);
  binary::put(out, h.config_hash);
  binary::put(out, h.height);
  binary::put(out, h.width);
  binary::put(out, h.channels);
  binary::put<std::uint64_t>(out, samples.size());
  const auto payload = static_cast<std::uint32_t>(2 * pixels * sizeof(float) + 5 * sizeof(double) + sizeof(std::uint32_t));
  for (const auto& s : samples) {
    binary::put(out, payload);
    binary::put_array(out, s.observation.head_image.data.data(), pixels);
    binary::put_array(out, s.observation.torso_image.data.data(), pixels);
    binary::put(out, s.observation.head_yaw);
    binary::put(out, s.observation.head_pitch);
    binary::put_array(out, s.d_r.data(), 3);
    binary::put(out, s.group_id);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a dataset file");
  }
  DatasetFile f;
  f.header.version = binary::get<std::uint32_t>(in);
  if (f.header.version != kVersion) throw std::runtime_error("unsupported dataset version");
  f.header.config_hash = binary::get<std::uint64_t>(in);
  f.header.height = binary::get<std::uint32_t>(in);
  f.header.width = binary::get<std::uint32_t>(in);
  f.header.channels = binary::get<std::uint32_t>(in);
  const auto count = binary::get<std::uint64_t>(in);
  const std::size_t pixels = static_cast<std::size_t>(f.header.height) * f.header.width * f.header.channels;
  const auto expected = static_cast<std::uint32_t>(2 * pixels * sizeof(float) + 5 * sizeof(double) + sizeof(std::uint32_t));
  f.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (binary::get<std::uint32_t>(in) != expected) throw std::runtime_error("corrupt dataset record length");
    Sample s;
    for (auto* img : {&s.observation.head_image, &s.observation.torso_image}) {
      img->height = static_cast<int>(f.header.height);
      img->width = static_cast<int>(f.header.width);
      img->channels = static_cast<int>(f.header.channels);
      img->data.resize(pixels);
      binary::get_array(in, img->data.data(), pixels);
    }
    s.observation.head_yaw = binary::get<double>(in);
    s.observation.head_pitch = binary::get<double>(in);
    binary::get_array(in, s.d_r.data(), 3);
    s.group_id = binary::get<std::uint32_t>(in);
    f.samples.push_back(std::move(s));
  }
  return f;
}

}  // namespace detservo::dataset
