#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "detservo/checkpoint.hpp"
#include "detservo/train.hpp"
#include "model_fixtures.hpp"

using namespace detservo;
using detservo::testing::random_observation;
using detservo::testing::tiny_config;

namespace {

std::vector<dataset::Sample> random_samples(const model::ModelConfig& mc, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  std::vector<dataset::Sample> out;
  for (int i = 0; i < n; ++i) out.push_back({random_observation(mc, rng), Vec3(u(rng), u(rng), u(rng)), 0});
  return out;
}

}  // namespace

TEST(AdamW, FirstStepMatchesHandComputation) {
  nn::ParamStore p;
  const auto w = p.add("layer.w", 1, 2);
  const auto b = p.add("layer.b", 1, 2);
  p[w] << 1.0, -2.0;
  p[b] << 0.5, 0.5;
  auto g = p.zeros_like();
  g[w] << 0.3, -0.1;
  g[b] << 2.0, 0.0;
  train::OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  train::AdamW opt(p, cfg);
  opt.step(p, g);
  // bias-corrected first step moves each entry by lr * sign(g); decay only on weights
  EXPECT_NEAR(p[w](0, 0), 1.0 - 0.01 * 0.1 * 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-12);
  EXPECT_NEAR(p[w](0, 1), -2.0 + 0.01 * 0.1 * 2.0 + 0.01 * 0.1 / (0.1 + 1e-8), 1e-12);
  EXPECT_NEAR(p[b](0, 0), 0.5 - 0.01, 1e-9);
  EXPECT_EQ(p[b](0, 1), 0.5);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Train, ZeroEpochsLeavesParametersUnchanged) {
  auto net = model::DistanceEstimator::create(tiny_config(), 1);
  const auto before = net.params();
  train::OptimizerConfig opt;
  opt.epochs = 0;
  const auto result = train::train(net, random_samples(tiny_config(), 4, 1), mph::HeadBank::default_bank(), {}, opt, 1);
  EXPECT_TRUE(result.history.empty());
  EXPECT_TRUE(net.params() == before);
}

TEST(Train, EmptyDatasetRejected) {
  auto net = model::DistanceEstimator::create(tiny_config(), 1);
  EXPECT_THROW(train::train(net, {}, mph::HeadBank::default_bank(), {}, {}, 1), std::invalid_argument);
}

TEST(Train, SingleSampleMemorized) {
  auto net = model::DistanceEstimator::create(tiny_config(), 2);
  auto data = random_samples(tiny_config(), 1, 2);
  data[0].d_r = Vec3(0.004, -0.003, 0.006);
  train::OptimizerConfig opt;
  opt.epochs = 1500;
  opt.batch_size = 1;
  opt.weight_decay = 0.0;
  const auto bank = mph::HeadBank::default_bank();
  const auto result = train::train(net, data, bank, {}, opt, 2);
  ASSERT_EQ(result.history.size(), 1500u);
  EXPECT_LT(result.history.back().loss, result.history.front().loss);
  const auto dec = mph::select_and_decode(net.forward(data[0].observation), bank);
  EXPECT_EQ(dec.head, 0);
  EXPECT_LT((dec.distance - data[0].d_r).norm(), 1e-4);
  EXPECT_LT(result.history.back().close_range_error, 1e-4);
}

TEST(Train, DeterministicGivenSeed) {
  const auto data = random_samples(tiny_config(), 6, 3);
  train::OptimizerConfig opt;
  opt.epochs = 3;
  opt.batch_size = 4;
  auto a = model::DistanceEstimator::create(tiny_config(), 3);
  auto b = model::DistanceEstimator::create(tiny_config(), 3);
  const auto bank = mph::HeadBank::default_bank();
  const auto ha = train::train(a, data, bank, {}, opt, 9).history;
  const auto hb = train::train(b, data, bank, {}, opt, 9).history;
  EXPECT_TRUE(a.params() == b.params());
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].loss, hb[i].loss);
  auto c = model::DistanceEstimator::create(tiny_config(), 3);
  train::train(c, data, bank, {}, opt, 10);
  EXPECT_FALSE(a.params() == c.params());
}

TEST(Train, CloseRangeErrorIsNanWithoutCloseSamples) {
  auto net = model::DistanceEstimator::create(tiny_config(), 4);
  auto data = random_samples(tiny_config(), 2, 4);
  for (auto& s : data) s.d_r = Vec3(0.05, 0.0, 0.0);
  EXPECT_TRUE(std::isnan(train::close_range_error(net, data, mph::HeadBank::default_bank(), 0.016)));
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  Checkpoint ck{Variant::kSph, mph::HeadBank::single(20.0, 0.128), mph::LossConfig{2.5},
                model::DistanceEstimator::create(tiny_config(), 5)};
  const auto path = std::filesystem::temp_directory_path() / "detservo_test.ckpt";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.variant, Variant::kSph);
  EXPECT_EQ(back.loss.k, 2.5);
  EXPECT_EQ(back.bank.size(), 1u);
  EXPECT_TRUE(back.net.params() == ck.net.params());
  std::mt19937_64 rng(5);
  const auto obs = random_observation(tiny_config(), rng);
  EXPECT_EQ(back.net.forward(obs).logits, ck.net.forward(obs).logits);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
