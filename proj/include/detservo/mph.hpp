/**
 * @file mph.hpp
 * @brief Perception-head bank: Gaussian clipped weights, the combined
 *        confidence / distance loss and inference-time head selection.
 */
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "detservo/geometry.hpp"

namespace detservo::mph {

struct PerceptionHeadSpec {
  double mu = 0.0;     ///< interval center, meters
  double sigma = 0.0;  ///< interval half width, meters
  double alpha = 1.0;  ///< decay outside the interval
  double lo = 0.0;     ///< interval [lo, hi) on the distance norm
  double hi = 0.0;

  double gain() const { return 1.0 / mu; }
  bool contains(double norm) const { return norm >= lo && norm < hi; }
};

class HeadBank {
 public:
  HeadBank() = default;
  /// Throws std::invalid_argument unless the intervals are contiguous from 0,
  /// disjoint, and every head has mu > 0, sigma > 0, alpha > 0.
  explicit HeadBank(std::vector<PerceptionHeadSpec> heads);

  /// Four heads, mu = 8/24/48/96 mm, sigma = 8/8/16/32 mm, alpha = 1.6/1/1/1.
  static HeadBank default_bank();
  /// One head covering [0, range) with a fixed output gain.
  static HeadBank single(double gain, double range);

  std::size_t size() const { return heads_.size(); }
  const PerceptionHeadSpec& operator[](std::size_t i) const { return heads_[i]; }
  const std::vector<PerceptionHeadSpec>& heads() const { return heads_; }
  double range() const { return heads_.empty() ? 0.0 : heads_.back().hi; }

  /// Index of the head whose interval contains `norm`, or -1.
  int head_for(double norm) const;

 private:
  std::vector<PerceptionHeadSpec> heads_;
};

struct LossConfig {
  double k = 1.0;               ///< distance-loss weight relative to cross-entropy
  bool uniform_weight = false;  ///< replace gcw with 1 (single-head ablation)
};

/// Per-head regression targets (already divided by mu and clipped) and the
/// one-hot head label.
struct EncodedTarget {
  std::vector<Vec3> d_o;
  std::vector<double> con_o;
  int head = -1;
};

/// Raw network outputs: amplified distances and one confidence logit per head.
struct HeadOutputs {
  std::vector<Vec3> distances;
  Eigen::VectorXd logits;
};

/// min(exp(a^2/2) * exp(-(a (x - mu) / sigma)^2 / 2), 1)
double gcw(const PerceptionHeadSpec& head, double x);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct LossTerms {
  double total = 0.0;
  double cross_entropy = 0.0;
  double distance = 0.0;  ///< k * sum_h w_h * L1_h
  HeadOutputs grad;       ///< d total / d outputs
};

/// Single-sample loss; the caller averages over the batch.
/// Throws std::invalid_argument on shape mismatch or non-finite inputs.
LossTerms mph_loss(const HeadOutputs& pred, const EncodedTarget& target, double dr_norm, const HeadBank& bank,
                   const LossConfig& cfg);

struct Decoded {
  int head = 0;
  Vec3 distance = Vec3::Zero();
  Eigen::VectorXd confidences;
};

/// Highest-confidence head (lowest index on ties) and its output scaled by mu.
Decoded select_and_decode(const HeadOutputs& pred, const HeadBank& bank);

}  // namespace detservo::mph
