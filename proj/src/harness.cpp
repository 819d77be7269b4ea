#include "detservo/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "detservo/hashing.hpp"

namespace detservo::harness {

namespace fs = std::filesystem;

Seeds seeds_from_base(std::uint64_t base) { return {base, base + 1, base + 2, base + 3}; }

VariantSetup variant_setup(const ExperimentConfig& config, Variant variant) {
  VariantSetup v{config.bank, config.loss, config.model};
  if (variant == Variant::kMph) {
    v.model.architecture = model::Architecture::kTransformer;
    v.loss.uniform_weight = false;
  } else {
    v.bank = mph::HeadBank::single(config.sph_gain, config.bank.range());
    v.loss.uniform_weight = true;
    v.model.architecture = variant == Variant::kPlain ? model::Architecture::kPlain : model::Architecture::kTransformer;
  }
  v.model.perception_heads = static_cast<int>(v.bank.size());
  return v;
}

void update_manifest(const ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& artifacts) {
  const RunPaths paths(config.run_dir);
  fs::create_directories(paths.root);
  {
    std::ofstream ini(paths.config());
    ini << to_ini(config);
  }
  nlohmann::json m;
  if (fs::exists(paths.manifest())) {
    std::ifstream in(paths.manifest());
    m = nlohmann::json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = nlohmann::json::object();
  }
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << config_hash(config);
  m["version"] = kVersion;
  m["config_hash"] = hash.str();
  m["seeds"] = {{"data", config.seeds.data}, {"init", config.seeds.init}, {"train", config.seeds.train},
                {"eval", config.seeds.eval}};
  m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)}};
  for (const auto& [name, sha] : artifacts) m["artifacts"][name] = sha;
  std::ofstream out(paths.manifest());
  out << m.dump(2) << '\n';
}

GenDataSummary cmd_gen_data(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const RunPaths paths(config.run_dir);
  fs::create_directories(paths.root);
  const auto groups = dataset::generate_groups(config.rig, config.sampler, config.bank, config.seeds.data);
  std::vector<dataset::Sample> samples;
  for (const auto& g : groups) {
    auto s = dataset::compute_ground_truth(g);
    samples.insert(samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  dataset::write_dataset(paths.dataset(), samples, config_hash(config));

  GenDataSummary sum;
  sum.groups = groups.size();
  sum.samples = samples.size();
  sum.histogram.assign(config.bank.size(), 0);
  for (const auto& s : samples) {
    const int h = config.bank.head_for(s.d_r.norm());
    if (h >= 0) ++sum.histogram[static_cast<std::size_t>(h)];
  }
  sum.file_sha256 = sha256_file(paths.dataset());
  update_manifest(config, {{"dataset.bin", sum.file_sha256}});

  log << "groups " << sum.groups << ", samples " << sum.samples << " -> " << paths.dataset().string() << '\n';
  log << "|d_r| histogram:\n";
  for (std::size_t h = 0; h < config.bank.size(); ++h) {
    log << "  head" << h + 1 << " [" << config.bank[h].lo << ", " << config.bank[h].hi << ") m: " << sum.histogram[h]
        << '\n';
  }
  log << "sha256 " << sum.file_sha256 << '\n';
  return sum;
}

TrainSummary cmd_train(const ExperimentConfig& config, Variant variant, std::ostream& log) {
  config.validate();
  const RunPaths paths(config.run_dir);
  if (!fs::exists(paths.dataset())) {
    throw std::runtime_error("dataset " + paths.dataset().string() + " not found; run gen-data first");
  }
  const auto data = dataset::read_dataset(paths.dataset());
  const VariantSetup v = variant_setup(config, variant);

  Checkpoint ckpt{variant, v.bank, v.loss, model::DistanceEstimator::create(v.model, config.seeds.init)};
  std::ofstream hist(paths.history(variant));
  if (!hist) throw std::runtime_error("cannot write " + paths.history(variant).string());
  hist << "epoch,loss,distance_loss,close_range_error\n" << std::setprecision(10);

  TrainSummary sum;
  const auto on_epoch = [&](const train::EpochLog& e) {
    hist << e.epoch << ',' << e.loss << ',' << e.distance_loss << ',' << e.close_range_error << '\n';
    hist.flush();
    log << to_string(variant) << " epoch " << e.epoch << "  loss " << e.loss << "  close-range error "
        << e.close_range_error * 1000.0 << " mm" << std::endl;
  };
  sum.history =
      train::train(ckpt.net, data.samples, v.bank, v.loss, config.optimizer, config.seeds.train, on_epoch).history;

  save_checkpoint(paths.checkpoint(variant), ckpt);
  sum.checkpoint_sha256 = sha256_file(paths.checkpoint(variant));
  update_manifest(config, {{paths.checkpoint(variant).filename().string(), sum.checkpoint_sha256}});
  log << "checkpoint " << paths.checkpoint(variant).string() << " sha256 " << sum.checkpoint_sha256 << '\n';
  return sum;
}

const ResultRow* ResultTable::find(const std::string& estimator, double tolerance) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.tolerance == tolerance) return &r;
  }
  return nullptr;
}

void write_result_csv(std::ostream& out, const ResultTable& table) {
  out << "estimator,tolerance_m,trials,successes,success_rate,ce_mean_m,ce_std_m\n" << std::setprecision(10);
  for (const auto& r : table.rows) {
    out << r.estimator << ',' << r.tolerance << ',' << r.trials << ',' << r.successes << ',' << r.success_rate << ','
        << r.ce_mean << ',' << r.ce_std << '\n';
  }
}

void write_result_text(std::ostream& out, const ResultTable& table) {
  const std::ios_base::fmtflags flags = out.flags();
  const std::streamsize precision = out.precision();
  out << "trials per cell: " << table.trials << '\n';
  out << std::left << std::setw(10) << "estimator" << std::right << std::setw(10) << "tol (mm)" << std::setw(10)
      << "SR (%)" << std::setw(22) << "CE (mm)" << '\n';
  for (const auto& r : table.rows) {
    std::ostringstream ce;
    ce << std::fixed << std::setprecision(3) << r.ce_mean * 1000.0 << " +- " << r.ce_std * 1000.0;
    out << std::left << std::setw(10) << r.estimator << std::right << std::fixed << std::setprecision(2)
        << std::setw(10) << r.tolerance * 1000.0 << std::setprecision(1) << std::setw(10) << r.success_rate * 100.0
        << std::setw(22) << ce.str() << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

controller::TrialSetup eval_trial_setup(const ExperimentConfig& config, int index) {
  scene::Rng rng(mix_seed(config.seeds.eval, static_cast<std::uint64_t>(index)));
  return controller::sample_trial(config.rig, config.sampler, config.bank.range() / 2.0, config.sampler.max_offset,
                                  rng);
}

std::vector<ResultRow> evaluate_estimator(const ExperimentConfig& config, const std::string& name,
                                          controller::Estimator& estimator, int trials) {
  std::vector<controller::TrialSetup> setups;
  for (int i = 0; i < trials; ++i) setups.push_back(eval_trial_setup(config, i));

  std::vector<ResultRow> rows;
  for (const double tol : config.tolerances) {
    controller::ServoConfig servo = config.servo;
    servo.success_tolerance = tol;
    ResultRow row{name, tol, trials, 0, 0.0, 0.0, 0.0};
    std::vector<double> errors;
    for (int i = 0; i < trials; ++i) {
      // Same noise stream for every estimator and tier.
      scene::Rng rng(mix_seed(config.seeds.eval ^ 0x5eed5eed5eedULL, static_cast<std::uint64_t>(i)));
      const auto res = controller::run_servo(config.rig, setups[static_cast<std::size_t>(i)], estimator, servo, rng);
      if (res.success) ++row.successes;
      errors.push_back(res.final_error);
    }
    if (trials > 0) {
      row.success_rate = static_cast<double>(row.successes) / trials;
      for (double e : errors) row.ce_mean += e;
      row.ce_mean /= trials;
      for (double e : errors) row.ce_std += (e - row.ce_mean) * (e - row.ce_mean);
      row.ce_std = std::sqrt(row.ce_std / trials);
    }
    rows.push_back(row);
  }
  return rows;
}

ResultTable cmd_eval(const ExperimentConfig& config, const std::vector<Variant>& variants, bool include_oracle,
                     std::ostream& log) {
  config.validate();
  const RunPaths paths(config.run_dir);
  ResultTable table;
  table.trials = config.trials;
  if (config.trials > 0) {
    if (include_oracle) {
      controller::OracleEstimator oracle;
      auto rows = evaluate_estimator(config, "oracle", oracle, config.trials);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
      log << "evaluated oracle" << std::endl;
    }
    for (const Variant v : variants) {
      const Checkpoint ckpt = load_checkpoint(paths.checkpoint(v));
      controller::ModelEstimator est(ckpt.net, ckpt.bank);
      auto rows = evaluate_estimator(config, to_string(v), est, config.trials);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
      log << "evaluated " << to_string(v) << std::endl;
    }
  }
  fs::create_directories(paths.root);
  {
    std::ofstream csv(paths.results_csv());
    write_result_csv(csv, table);
  }
  {
    std::ofstream txt(paths.results_txt());
    write_result_text(txt, table);
  }
  write_result_text(log, table);
  update_manifest(config, {{"results.csv", sha256_file(paths.results_csv())}});
  return table;
}

controller::TrialResult cmd_servo(const ExperimentConfig& config, const fs::path& checkpoint, bool oracle, int trial,
                                  const fs::path& trace_csv, std::ostream& log) {
  config.validate();
  const auto setup = eval_trial_setup(config, trial);
  scene::Rng rng(mix_seed(config.seeds.eval ^ 0x5eed5eed5eedULL, static_cast<std::uint64_t>(trial)));
  controller::TrialResult res;
  if (oracle) {
    controller::OracleEstimator est;
    res = controller::run_servo(config.rig, setup, est, config.servo, rng);
  } else {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    controller::ModelEstimator est(ckpt.net, ckpt.bank);
    res = controller::run_servo(config.rig, setup, est, config.servo, rng);
  }
  if (!trace_csv.empty()) controller::write_trace_csv(trace_csv, res.trace);
  log << "trial " << trial << ": start error " << (setup.state.tool_tip() - setup.state.screw.translation).norm() * 1000.0
      << " mm, final error " << res.final_error * 1000.0 << " mm, " << (res.success ? "success" : "failure")
      << (res.converged ? ", converged" : "") << " after " << res.duration << " s";
  if (!res.failure.empty()) log << " (" << res.failure << ')';
  log << '\n';
  return res;
}

void write_gcw_table(std::ostream& out, const mph::HeadBank& bank) {
  out << "x_m";
  for (std::size_t h = 0; h < bank.size(); ++h) out << ",head" << h + 1;
  out << '\n' << std::setprecision(17);
  for (int i = 0; i <= 280; ++i) {
    const double x = i * 0.0005;
    out << x;
    for (std::size_t h = 0; h < bank.size(); ++h) out << ',' << mph::gcw(bank[h], x);
    out << '\n';
  }
}

void cmd_gcw_table(const ExperimentConfig& config, std::ostream& log) {
  const RunPaths paths(config.run_dir);
  fs::create_directories(paths.root);
  std::ofstream out(paths.gcw_table());
  if (!out) throw std::runtime_error("cannot write " + paths.gcw_table().string());
  write_gcw_table(out, config.bank);
  log << "wrote " << paths.gcw_table().string() << '\n';
}

}  // namespace detservo::harness
