#include <cmath>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "detservo/config.hpp"
#include "detservo/harness.hpp"

using namespace detservo;

namespace {

std::vector<std::vector<double>> parse_csv(const std::string& text, std::string* header) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, *header);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST(GcwTable, GridAndGoldenValues) {
  std::ostringstream out;
  harness::write_gcw_table(out, mph::HeadBank::default_bank());
  std::string header;
  const auto rows = parse_csv(out.str(), &header);
  EXPECT_EQ(header, "x_m,head1,head2,head3,head4");
  ASSERT_EQ(rows.size(), 281u);
  EXPECT_EQ(rows.front()[0], 0.0);
  EXPECT_NEAR(rows.back()[0], 0.14, 1e-15);
  EXPECT_NEAR(rows[0][2], std::exp(-4.0), 1e-12);
  EXPECT_NEAR(rows[0][2], 0.0183, 5e-5);
  EXPECT_EQ(rows[16][1], 1.0);   // x = 0.008, Head1 centre
  EXPECT_EQ(rows[48][2], 1.0);   // x = 0.024
  EXPECT_EQ(rows[192][4], 1.0);  // x = 0.096
  for (const auto& r : rows) {
    for (std::size_t h = 1; h < r.size(); ++h) {
      EXPECT_GE(r[h], 0.0);
      EXPECT_LE(r[h], 1.0);
    }
  }
}

TEST(GcwTable, DeterministicAndEmptyBankRejected) {
  std::ostringstream a, b;
  harness::write_gcw_table(a, mph::HeadBank::default_bank());
  harness::write_gcw_table(b, mph::HeadBank::default_bank());
  EXPECT_EQ(a.str(), b.str());
  EXPECT_THROW(mph::HeadBank(std::vector<mph::PerceptionHeadSpec>{}), std::invalid_argument);
}

TEST(Config, DefaultsValidate) {
  const auto c = default_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model.perception_heads, 4);
  EXPECT_EQ(c.sampler.groups, 40);
  EXPECT_EQ(c.servo.success_tolerance, 0.002);
}

TEST(Config, IniRoundTrip) {
  const auto c = default_config();
  const std::string text = to_ini(c);
  const auto back = parse_config(text);
  EXPECT_EQ(to_ini(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, OverridesApplyAndChangeHash) {
  const auto c = parse_config("[servo]\nkp = 3.5\n[run]\ntrials = 7\ntolerances = 0.003 0.002 0.001\n");
  EXPECT_EQ(c.servo.kp, 3.5);
  EXPECT_EQ(c.trials, 7);
  EXPECT_EQ(c.servo.success_tolerance, 0.003);
  EXPECT_NE(config_hash(c), config_hash(default_config()));
}

TEST(Config, HashIgnoresRunDirectory) {
  auto a = default_config();
  auto b = a;
  b.run_dir = "elsewhere/run";
  EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[servo]\nkpp = 2\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[nosuch]\nx = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[servo]\nkp = fast\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[servo]\nkp = -1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[run]\ntolerances = 0.001 0.002 0.003\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[sampler]\nmax_offset = 0.2\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[model]\nembed_dim = 30\n"), std::invalid_argument);
}

TEST(Config, HeadBankFromIni) {
  const auto c = parse_config(
      "[heads]\ncount = 2\nhead1 = 0.01 0.01 1 0 0.02\nhead2 = 0.05 0.03 1 0.02 0.1\n[sampler]\nmax_offset = 0.1\n");
  ASSERT_EQ(c.bank.size(), 2u);
  EXPECT_EQ(c.bank[1].mu, 0.05);
  EXPECT_EQ(c.model.perception_heads, 2);
}

TEST(Seeds, ConsecutiveFromBase) {
  const auto s = harness::seeds_from_base(100);
  EXPECT_EQ(s.data, 100u);
  EXPECT_EQ(s.init, 101u);
  EXPECT_EQ(s.train, 102u);
  EXPECT_EQ(s.eval, 103u);
}

TEST(Variants, SetupMatchesAblationContract) {
  const auto c = default_config();
  const auto mph = harness::variant_setup(c, Variant::kMph);
  EXPECT_EQ(mph.bank.size(), 4u);
  EXPECT_FALSE(mph.loss.uniform_weight);
  const auto sph = harness::variant_setup(c, Variant::kSph);
  ASSERT_EQ(sph.bank.size(), 1u);
  EXPECT_NEAR(sph.bank[0].mu, 1.0 / 20.0, 1e-15);
  EXPECT_TRUE(sph.loss.uniform_weight);
  EXPECT_EQ(sph.model.architecture, model::Architecture::kTransformer);
  EXPECT_EQ(sph.model.embed_dim, mph.model.embed_dim);
  const auto plain = harness::variant_setup(c, Variant::kPlain);
  EXPECT_EQ(plain.model.architecture, model::Architecture::kPlain);
  EXPECT_EQ(plain.model.perception_heads, 1);
}

TEST(Evaluation, TrialSetupsArePairedAndInRange) {
  const auto c = default_config();
  for (int i = 0; i < 5; ++i) {
    const auto a = harness::eval_trial_setup(c, i);
    const auto b = harness::eval_trial_setup(c, i);
    EXPECT_EQ(a.joints, b.joints);
    const double offset = (a.state.tool_tip() - a.state.screw.translation).norm();
    EXPECT_GE(offset, 0.064 - 1e-6);
    EXPECT_LT(offset, 0.128 + 1e-6);
  }
  EXPECT_NE(harness::eval_trial_setup(c, 0).joints, harness::eval_trial_setup(c, 1).joints);
}

TEST(Evaluation, OracleSucceedsOnEveryTier) {
  auto c = default_config();
  controller::OracleEstimator oracle;
  const auto rows = harness::evaluate_estimator(c, "oracle", oracle, 5);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.trials, 5);
    EXPECT_EQ(r.successes, 5);
    EXPECT_EQ(r.success_rate, 1.0);
    EXPECT_LT(r.ce_mean, 1e-4);
  }
  harness::ResultTable table{5, rows};
  ASSERT_NE(table.find("oracle", 0.0015), nullptr);
  EXPECT_EQ(table.find("mph", 0.0015), nullptr);
  std::ostringstream csv;
  harness::write_result_csv(csv, table);
  std::string header;
  std::istringstream in(csv.str());
  std::getline(in, header);
  EXPECT_EQ(header, "estimator,tolerance_m,trials,successes,success_rate,ce_mean_m,ce_std_m");
}
