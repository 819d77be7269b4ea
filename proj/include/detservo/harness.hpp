/**
 * @file harness.hpp
 * @brief Experiment orchestration behind the command line tool.
 *
 * Artifacts of one run live under ExperimentConfig::run_dir:
 *   manifest.json          config hash, seeds, tool version, artifact hashes
 *   config.ini             effective configuration
 *   dataset.bin            training samples
 *   <variant>.ckpt         checkpoints (mph, sph, plain)
 *   <variant>_history.csv  epoch,loss,distance_loss,close_range_error
 *   results.csv/.txt       ResultTable
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "detservo/checkpoint.hpp"
#include "detservo/config.hpp"
#include "detservo/controller.hpp"
#include "detservo/train.hpp"

namespace detservo::harness {

inline constexpr const char* kVersion = "1.0.0";

struct RunPaths {
  std::filesystem::path root;

  explicit RunPaths(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path config() const { return root / "config.ini"; }
  std::filesystem::path dataset() const { return root / "dataset.bin"; }
  std::filesystem::path checkpoint(Variant v) const { return root / (to_string(v) + ".ckpt"); }
  std::filesystem::path history(Variant v) const { return root / (to_string(v) + "_history.csv"); }
  std::filesystem::path results_csv() const { return root / "results.csv"; }
  std::filesystem::path results_txt() const { return root / "results.txt"; }
  std::filesystem::path gcw_table() const { return root / "gcw_table.csv"; }
};

/// Replaces all seeds with consecutive values starting at `base`.
Seeds seeds_from_base(std::uint64_t base);

/// Head bank, loss and model settings of a training variant. SPH and plain use
/// one head with the fixed sph_gain and uniform loss weight.
struct VariantSetup {
  mph::HeadBank bank;
  mph::LossConfig loss;
  model::ModelConfig model;
};
VariantSetup variant_setup(const ExperimentConfig& config, Variant variant);

struct GenDataSummary {
  std::size_t groups = 0;
  std::size_t samples = 0;
  std::vector<std::size_t> histogram;  ///< |d_r| counts per head interval of the configured bank
  std::string file_sha256;
};

/// Generates the measurement groups and writes the dataset. Throws
/// dataset::GroupAbortedError when a screw placement stays unreachable.
GenDataSummary cmd_gen_data(const ExperimentConfig& config, std::ostream& log);

struct TrainSummary {
  std::vector<train::EpochLog> history;
  std::string checkpoint_sha256;
};

/// Trains one variant on the run's dataset. Throws train::DivergenceError.
TrainSummary cmd_train(const ExperimentConfig& config, Variant variant, std::ostream& log);

struct ResultRow {
  std::string estimator;  ///< mph, sph, plain, oracle
  double tolerance = 0.0;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  double ce_mean = 0.0;  ///< mean final tool-to-slot distance over all trials, m
  double ce_std = 0.0;
};

struct ResultTable {
  int trials = 0;
  std::vector<ResultRow> rows;
  const ResultRow* find(const std::string& estimator, double tolerance) const;
};

/// CSV header: estimator,tolerance_m,trials,successes,success_rate,ce_mean_m,ce_std_m
void write_result_csv(std::ostream& out, const ResultTable& table);
void write_result_text(std::ostream& out, const ResultTable& table);

/// Trial i of every estimator starts from the same placement, drawn from
/// mix_seed(eval_seed, i) with the offset norm in [bank.range()/2, sampler.max_offset).
controller::TrialSetup eval_trial_setup(const ExperimentConfig& config, int index);

/// Runs `trials` servo trials per tolerance tier with one estimator.
std::vector<ResultRow> evaluate_estimator(const ExperimentConfig& config, const std::string& name,
                                          controller::Estimator& estimator, int trials);

/// Evaluates the given checkpoints (and optionally the oracle) over
/// config.trials trials per tier and writes results.csv and results.txt.
ResultTable cmd_eval(const ExperimentConfig& config, const std::vector<Variant>& variants, bool include_oracle,
                     std::ostream& log);

/// One servo trial (index `trial`) with a checkpoint or the oracle; writes a trace CSV.
controller::TrialResult cmd_servo(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                  bool oracle, int trial, const std::filesystem::path& trace_csv,
                                  std::ostream& log);

/// CSV header: x_m,head1,...,headN. Rows at 0.0005 m steps over [0, 0.14].
void write_gcw_table(std::ostream& out, const mph::HeadBank& bank);
void cmd_gcw_table(const ExperimentConfig& config, std::ostream& log);

/// Writes config.ini and merges `artifacts` (name -> sha256) into manifest.json.
void update_manifest(const ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& artifacts);

}  // namespace detservo::harness
