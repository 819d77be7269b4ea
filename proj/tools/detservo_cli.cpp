// Command line front end: gen-data, train, eval, servo, gcw-table, config.
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detservo/harness.hpp"

using namespace detservo;

int main(int argc, char** argv) {
  CLI::App app{"Distance-estimation visual servoing experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> run_dir;
  app.add_option("-c,--config", config_path, "INI configuration (defaults are used for omitted keys)");
  app.add_option("--seed", seed, "base seed; data/init/train/eval seeds become seed..seed+3");
  app.add_option("--run-dir", run_dir, "override run.dir");

  auto* gen = app.add_subcommand("gen-data", "generate the measurement-group dataset");

  std::vector<std::string> variants;
  auto* tr = app.add_subcommand("train", "train one or more variants");
  tr->add_option("--variant", variants, "mph, sph or plain (repeatable)")
      ->check(CLI::IsMember({"mph", "sph", "plain"}))
      ->default_str("mph");

  std::optional<int> trials;
  bool oracle = false;
  auto* ev = app.add_subcommand("eval", "closed-loop evaluation per tolerance tier");
  ev->add_option("--variant", variants, "checkpoints to evaluate (repeatable)")
      ->check(CLI::IsMember({"mph", "sph", "plain"}));
  ev->add_option("--trials", trials, "trials per cell (overrides run.trials)")->check(CLI::NonNegativeNumber);
  ev->add_flag("--oracle", oracle, "include the ground-truth estimator");

  std::string checkpoint;
  std::string trace;
  int trial = 0;
  auto* sv = app.add_subcommand("servo", "run one servo trial and write its trace");
  sv->add_option("--checkpoint", checkpoint, "checkpoint file");
  sv->add_flag("--oracle", oracle, "use the ground-truth estimator instead of a checkpoint");
  sv->add_option("--trial", trial, "trial index")->check(CLI::NonNegativeNumber);
  sv->add_option("--trace", trace, "trace CSV path");
  sv->add_option("--variant", variants, "use <run_dir>/<variant>.ckpt")->check(CLI::IsMember({"mph", "sph", "plain"}));

  auto* gcw = app.add_subcommand("gcw-table", "tabulate the loss weight of every head");
  auto* show = app.add_subcommand("config", "print the effective configuration as INI");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
    if (seed) cfg.seeds = harness::seeds_from_base(*seed);
    if (run_dir) cfg.run_dir = *run_dir;
    if (trials) cfg.trials = *trials;
    cfg.validate();

    if (*gen) {
      harness::cmd_gen_data(cfg, std::cout);
    } else if (*tr) {
      if (variants.empty()) variants.push_back("mph");
      for (const auto& v : variants) harness::cmd_train(cfg, variant_from_string(v), std::cout);
    } else if (*ev) {
      if (variants.empty() && !oracle) variants = {"mph", "sph", "plain"};
      std::vector<Variant> vs;
      for (const auto& v : variants) vs.push_back(variant_from_string(v));
      harness::cmd_eval(cfg, vs, oracle, std::cout);
    } else if (*sv) {
      if (checkpoint.empty() && !variants.empty()) {
        checkpoint = harness::RunPaths(cfg.run_dir).checkpoint(variant_from_string(variants.front())).string();
      }
      if (checkpoint.empty() && !oracle) throw std::invalid_argument("servo needs --checkpoint, --variant or --oracle");
      const auto res = harness::cmd_servo(cfg, checkpoint, oracle, trial, trace, std::cout);
      return res.failure.empty() ? 0 : 2;
    } else if (*gcw) {
      harness::cmd_gcw_table(cfg, std::cout);
    } else if (*show) {
      std::cout << to_ini(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
