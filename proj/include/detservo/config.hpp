/**
 * @file config.hpp
 * @brief Experiment configuration: a flat INI file of typed keys grouped in
 *        sections. Every key is optional; omitted keys keep the built-in
 *        defaults, unknown keys are rejected. See config/SCHEMA.md.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "detservo/controller.hpp"
#include "detservo/dataset.hpp"
#include "detservo/model.hpp"
#include "detservo/mph.hpp"
#include "detservo/scene.hpp"
#include "detservo/train.hpp"

namespace detservo {

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t init = 2;
  std::uint64_t train = 3;
  std::uint64_t eval = 4;
};

struct ExperimentConfig {
  std::string run_dir = "runs/default";
  scene::SimRig rig;
  dataset::SamplerConfig sampler;
  mph::HeadBank bank = mph::HeadBank::default_bank();
  double sph_gain = 20.0;  ///< 1/m, fixed gain of the single-head ablations
  model::ModelConfig model;
  mph::LossConfig loss;
  train::OptimizerConfig optimizer;
  controller::ServoConfig servo;
  std::vector<double> tolerances{0.002, 0.0015, 0.001};  ///< coarse, medium, fine
  int trials = 100;
  Seeds seeds;

  /// Throws std::invalid_argument naming the offending setting.
  void validate() const;
};

/// Built-in defaults: 7-joint arm, 64x64 head and torso cameras, default head bank.
ExperimentConfig default_config();

/// Parses INI text on top of the defaults. Throws std::invalid_argument.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full effective configuration as INI text; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

/// Hash of the effective configuration, ignoring the run directory.
std::uint64_t config_hash(const ExperimentConfig& config);

/// Rotation whose z axis points from `position` to `target` with image x
/// horizontal (perpendicular to torso z).
Mat3 look_at_rotation(const Vec3& position, const Vec3& target);

}  // namespace detservo
