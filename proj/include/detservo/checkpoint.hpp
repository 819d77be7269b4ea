/**
 * @file checkpoint.hpp
 * @brief Model checkpoint file.
 *
 * Layout (little-endian):
 *   8 bytes  magic "DSRVCKPT"
 *   u32      format version (1)
 *   string   metadata (u32 length + UTF-8 "key=value" lines: model config,
 *            variant, head bank)
 *   u32      tensor count
 *   per tensor: string name, u32 rows, u32 cols, f64[rows*cols] column-major values
 */
#pragma once

#include <filesystem>
#include <string>

#include "detservo/model.hpp"
#include "detservo/mph.hpp"

namespace detservo {

enum class Variant { kMph, kSph, kPlain };

std::string to_string(Variant v);
/// Accepts "mph", "sph", "plain". Throws std::invalid_argument otherwise.
Variant variant_from_string(const std::string& s);

struct Checkpoint {
  Variant variant = Variant::kMph;
  mph::HeadBank bank;
  mph::LossConfig loss;
  model::DistanceEstimator net{model::ModelConfig{}};
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on malformed files or tensor shape mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace detservo
