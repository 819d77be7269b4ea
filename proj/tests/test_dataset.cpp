#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "detservo/config.hpp"
#include "detservo/dataset.hpp"
#include "detservo/hashing.hpp"

using namespace detservo;
using namespace detservo::dataset;

namespace {

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Pose::from_xyz_rpy({u(rng), u(rng), u(rng)}, {3 * u(rng), 1.5 * u(rng), 3 * u(rng)});
}

ExperimentConfig small_config(int groups, int points) {
  auto c = default_config();
  c.sampler.groups = groups;
  c.sampler.points_min = c.sampler.points_max = points;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("detservo_test_" + name);
}

}  // namespace

TEST(Equivalence, EqualRotationsGiveEqualDisplacements) {
  std::mt19937_64 rng(1);
  std::vector<Pose> a, b;
  std::vector<Pose> grasps;
  for (int i = 0; i < 1000; ++i) {
    const Pose pa = random_pose(rng);
    Pose pb = random_pose(rng);
    pb.rotation = pa.rotation;
    a.push_back(pa);
    b.push_back(pb);
  }
  const Pose grasp = random_pose(rng);
  const auto rep = verify_equivalence(grasp, a, b);
  EXPECT_LT(rep.max_equal_rotation_residual, 1e-12);
  for (const auto& e : rep.entries) EXPECT_TRUE(e.rotations_equal);
}

TEST(Equivalence, RotatedPairsMatchDirectResidual) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Pose> a, b;
  for (int i = 0; i < 200; ++i) {
    const Pose pa = random_pose(rng);
    Pose pb = random_pose(rng);
    pb.rotation = axis_angle(Vec3(u(rng), u(rng), u(rng)).normalized(), 10.0 * M_PI / 180.0) * pa.rotation;
    a.push_back(pa);
    b.push_back(pb);
  }
  const Pose grasp = Pose::from_translation({0.01, -0.02, -0.1});
  const auto rep = verify_equivalence(grasp, a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 direct = (b[i].rotation - a[i].rotation) * grasp.translation;
    EXPECT_LT((rep.entries[i].residual - direct).norm(), 1e-12);
    EXPECT_NEAR(rep.entries[i].rotation_angle, 10.0 * M_PI / 180.0, 1e-9);
    EXPECT_FALSE(rep.entries[i].rotations_equal);
  }
  EXPECT_THROW(verify_equivalence(grasp, a, {}), std::invalid_argument);
}

TEST(Encode, ExamplesAndClipping) {
  const auto bank = mph::HeadBank::default_bank();
  const auto t = encode_targets({0.004, 0.0, -0.002}, bank);
  EXPECT_EQ(t.head, 0);
  EXPECT_EQ(t.con_o, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_NEAR((t.d_o[0] - Vec3(0.5, 0.0, -0.25)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((t.d_o[3] - Vec3(0.004 / 0.096, 0.0, -0.002 / 0.096)).norm(), 0.0, 1e-15);

  const auto far = encode_targets({0.1, 0.0, 0.0}, bank);
  EXPECT_EQ(far.head, 3);
  EXPECT_DOUBLE_EQ(far.d_o[0].x(), 3.0);  // 12.5 clipped
  EXPECT_DOUBLE_EQ(far.d_o[1].x(), 3.0);
  EXPECT_DOUBLE_EQ(far.d_o[2].x(), 0.1 / 0.048);

  EXPECT_EQ(encode_targets({0.0, 0.016, 0.0}, bank).head, 1);
  EXPECT_THROW(encode_targets({0.128, 0.0, 0.0}, bank), OutOfRangeError);
}

TEST(Sampler, OffsetsCoverEveryHead) {
  const auto bank = mph::HeadBank::default_bank();
  scene::Rng rng(3);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 4000; ++i) {
    const Vec3 d = sample_offset(bank, 0.128, rng);
    ASSERT_LT(d.norm(), 0.128);
    ++counts[static_cast<std::size_t>(bank.head_for(d.norm()))];
  }
  for (int c : counts) EXPECT_GT(c, 800);
}

TEST(Collect, GroupSharesRotationAndGrasp) {
  const auto c = small_config(1, 15);
  scene::Rng rng(4);
  const auto g = collect_group(c.rig, c.sampler, c.bank, 15, rng, 7);
  ASSERT_EQ(g.points.size(), 15u);
  EXPECT_EQ(g.id, 7u);
  // aligned benchmark: tool tip on the screw center
  EXPECT_LT(((g.benchmark.end_effector * g.grasp).translation - g.screw.translation).norm(), 1e-12);
  for (const auto& p : g.points) {
    EXPECT_EQ(p.end_effector.rotation, g.benchmark.end_effector.rotation);
    EXPECT_TRUE(c.rig.arm.within_bounds(p.joints));
    const Pose fk = kinematics::forward_kinematics(c.rig.arm, p.joints);
    EXPECT_LT((fk.translation - p.end_effector.translation).norm(), 1e-6);
  }
  EXPECT_LE(g.rotation_error.cwiseAbs().maxCoeff(), c.sampler.rotation_error_bound);
}

TEST(GroundTruth, BenchmarkSubtractionEqualsToolDisplacement) {
  const auto c = small_config(1, 10);
  scene::Rng rng(5);
  const auto g = collect_group(c.rig, c.sampler, c.bank, 10, rng);
  const auto samples = compute_ground_truth(g);
  ASSERT_EQ(samples.size(), 10u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec3 tool = (g.points[i].end_effector * g.grasp).translation - g.screw.translation;
    EXPECT_LT((samples[i].d_r - tool).norm(), 1e-12);
    EXPECT_LT(samples[i].d_r.norm(), c.sampler.max_offset);
    EXPECT_EQ(samples[i].observation, g.points[i].observation);
  }
}

TEST(GroundTruth, RotatedPointIsRejected) {
  const auto c = small_config(1, 3);
  scene::Rng rng(6);
  auto g = collect_group(c.rig, c.sampler, c.bank, 3, rng);
  g.points[1].end_effector.rotation = axis_angle(Vec3::UnitZ(), 1e-6) * g.points[1].end_effector.rotation;
  EXPECT_THROW(compute_ground_truth(g), IntegrityError);
}

TEST(Generate, DeterministicAndIndependentPerGroup) {
  const auto c = small_config(3, 4);
  const auto a = generate_groups(c.rig, c.sampler, c.bank, 11);
  const auto b = generate_groups(c.rig, c.sampler, c.bank, 11);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(compute_ground_truth(a[i]), compute_ground_truth(b[i]));
  // group 1 does not depend on how many groups precede or follow it
  auto c2 = c;
  c2.sampler.groups = 2;
  const auto d = generate_groups(c2.rig, c2.sampler, c2.bank, 11);
  EXPECT_EQ(compute_ground_truth(a[1]), compute_ground_truth(d[1]));
  const auto e = generate_groups(c.rig, c.sampler, c.bank, 12);
  EXPECT_NE(compute_ground_truth(a[0]), compute_ground_truth(e[0]));
}

TEST(File, RoundTripAndStableHash) {
  const auto c = small_config(1, 15);
  const auto groups = generate_groups(c.rig, c.sampler, c.bank, 21);
  const auto samples = compute_ground_truth(groups[0]);
  const auto p1 = temp_file("rt1.bin"), p2 = temp_file("rt2.bin");
  write_dataset(p1, samples, 0xabcdefULL);
  const auto again = compute_ground_truth(generate_groups(c.rig, c.sampler, c.bank, 21)[0]);
  write_dataset(p2, again, 0xabcdefULL);
  EXPECT_EQ(sha256_file(p1), sha256_file(p2));

  const auto f = read_dataset(p1);
  EXPECT_EQ(f.header.version, 1u);
  EXPECT_EQ(f.header.config_hash, 0xabcdefULL);
  EXPECT_EQ(f.header.height, 64u);
  ASSERT_EQ(f.samples.size(), 15u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(f.samples[i].d_r, samples[i].d_r);
    EXPECT_EQ(f.samples[i].group_id, samples[i].group_id);
    EXPECT_EQ(f.samples[i].observation.head_image, samples[i].observation.head_image);
    EXPECT_EQ(f.samples[i].observation.head_yaw, samples[i].observation.head_yaw);
  }
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(File, RejectsCorruptFiles) {
  const auto c = small_config(1, 2);
  const auto samples = compute_ground_truth(generate_groups(c.rig, c.sampler, c.bank, 1)[0]);
  const auto p = temp_file("corrupt.bin");
  write_dataset(p, samples, 1);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  write_dataset(p, samples, 1);
  std::filesystem::resize_file(p, std::filesystem::file_size(p) - 10);
  EXPECT_THROW(read_dataset(p), std::runtime_error);
  std::filesystem::remove(p);
  EXPECT_THROW(read_dataset(p), std::runtime_error);
}
