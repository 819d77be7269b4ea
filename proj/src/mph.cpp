#include "detservo/mph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace detservo::mph {

HeadBank::HeadBank(std::vector<PerceptionHeadSpec> heads) : heads_(std::move(heads)) {
  if (heads_.empty()) throw std::invalid_argument("head bank is empty");
  double edge = 0.0;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const auto& h = heads_[i];
    const std::string tag = "head " + std::to_string(i + 1);
    if (!(h.mu > 0.0) || !(h.sigma > 0.0) || !(h.alpha > 0.0)) {
      throw std::invalid_argument(tag + ": mu, sigma and alpha must be positive");
    }
    if (h.lo != edge) throw std::invalid_argument(tag + ": intervals must be contiguous starting at 0");
    if (!(h.hi > h.lo)) throw std::invalid_argument(tag + ": empty interval");
    edge = h.hi;
  }
}

HeadBank HeadBank::default_bank() {
  return HeadBank({
      {0.008, 0.008, 1.6, 0.000, 0.016},
      {0.024, 0.008, 1.0, 0.016, 0.032},
      {0.048, 0.016, 1.0, 0.032, 0.064},
      {0.096, 0.032, 1.0, 0.064, 0.128},
  });
}

HeadBank HeadBank::single(double gain, double range) {
  return HeadBank({{1.0 / gain, 0.5 * range, 1.0, 0.0, range}});
}

int HeadBank::head_for(double norm) const {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    if (heads_[i].contains(norm)) return static_cast<int>(i);
  }
  return -1;
}

double gcw(const PerceptionHeadSpec& head, double x) {
  const double z = head.alpha * (x - head.mu) / head.sigma;
  return std::min(std::exp(0.5 * head.alpha * head.alpha) * std::exp(-0.5 * z * z), 1.0);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

LossTerms mph_loss(const HeadOutputs& pred, const EncodedTarget& target, double dr_norm, const HeadBank& bank,
                   const LossConfig& cfg) {
  const std::size_t n = bank.size();
  if (pred.distances.size() != n || static_cast<std::size_t>(pred.logits.size()) != n ||
      target.d_o.size() != n || target.con_o.size() != n) {
    throw std::invalid_argument("prediction/target head count does not match the head bank");
  }
  if (!pred.logits.allFinite() || !std::isfinite(dr_norm)) throw std::invalid_argument("non-finite loss input");
  for (const auto& d : pred.distances) {
    if (!d.allFinite()) throw std::invalid_argument("non-finite distance output");
  }

  LossTerms out;
  out.grad.distances.assign(n, Vec3::Zero());
  out.grad.logits = Eigen::VectorXd::Zero(n);

  // cross-entropy against the one-hot label, via log-sum-exp
  const double m = pred.logits.maxCoeff();
  const double lse = m + std::log((pred.logits.array() - m).exp().sum());
  const Eigen::VectorXd p = softmax(pred.logits);
  for (std::size_t h = 0; h < n; ++h) {
    out.cross_entropy += target.con_o[h] * (lse - pred.logits[h]);
    out.grad.logits[h] = p[h] - target.con_o[h];
  }

  for (std::size_t h = 0; h < n; ++h) {
    const double w = cfg.k * (cfg.uniform_weight ? 1.0 : gcw(bank[h], dr_norm));
    const Vec3 diff = pred.distances[h] - target.d_o[h];
    out.distance += w * diff.cwiseAbs().sum();
    for (int c = 0; c < 3; ++c) {
      out.grad.distances[h][c] = diff[c] > 0.0 ? w : (diff[c] < 0.0 ? -w : 0.0);
    }
  }
  out.total = out.cross_entropy + out.distance;
  return out;
}

Decoded select_and_decode(const HeadOutputs& pred, const HeadBank& bank) {
  if (pred.distances.size() != bank.size() || static_cast<std::size_t>(pred.logits.size()) != bank.size()) {
    throw std::invalid_argument("prediction head count does not match the head bank");
  }
  if (!pred.logits.allFinite()) throw std::invalid_argument("non-finite confidence logits");
  Decoded d;
  d.confidences = softmax(pred.logits);
  int best = 0;
  for (int h = 1; h < pred.logits.size(); ++h) {
    if (pred.logits[h] > pred.logits[best]) best = h;
  }
  d.head = best;
  d.distance = bank[best].mu * pred.distances[best];
  return d;
}

}  // namespace detservo::mph
