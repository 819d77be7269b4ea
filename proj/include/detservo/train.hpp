#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "detservo/dataset.hpp"
#include "detservo/layers.hpp"
#include "detservo/model.hpp"
#include "detservo/mph.hpp"

namespace detservo::train {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  ///< decoupled; skipped for biases and norm parameters
  int batch_size = 8;
  int epochs = 50;
  double close_range = 0.016;  ///< |d_r| threshold for the close-range error log

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;           ///< mean combined loss over the epoch
  double distance_loss = 0.0;  ///< mean weighted L1 part
  double close_range_error = 0.0;  ///< mean decoded error (m) on close-range samples
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class AdamW {
 public:
  AdamW(const nn::ParamStore& like, const OptimizerConfig& cfg);
  void step(nn::ParamStore& params, const nn::ParamStore& grads);
  int steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  nn::ParamStore m_;
  nn::ParamStore v_;
  std::vector<bool> decay_;
  int t_ = 0;
};

struct BatchResult {
  double loss = 0.0;
  double distance_loss = 0.0;
};

/// Mean loss over the batch; accumulates the batch-mean gradient into `grads`.
BatchResult batch_gradient(const model::DistanceEstimator& net, std::span<const dataset::Sample* const> batch,
                           const mph::HeadBank& bank, const mph::LossConfig& loss, nn::ParamStore& grads);

/// Mean |decoded - d_r| over samples with |d_r| < threshold; NaN when there are none.
double close_range_error(const model::DistanceEstimator& net, const std::vector<dataset::Sample>& data,
                         const mph::HeadBank& bank, double threshold);

struct TrainResult {
  std::vector<EpochLog> history;
};

/// Shuffled mini-batch AdamW. Throws DivergenceError when the loss turns
/// non-finite and std::invalid_argument on an empty dataset.
TrainResult train(model::DistanceEstimator& net, const std::vector<dataset::Sample>& data, const mph::HeadBank& bank,
                  const mph::LossConfig& loss, const OptimizerConfig& opt, std::uint64_t seed,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace detservo::train
