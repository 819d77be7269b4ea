#include "detservo/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace detservo::train {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
}

namespace {

bool decays(const std::string& name) {
  const auto ends_with = [&](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends_with(".b") || ends_with(".gamma") || ends_with(".beta"));
}

}  // namespace

AdamW::AdamW(const nn::ParamStore& like, const OptimizerConfig& cfg)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {
  for (std::size_t i = 0; i < like.size(); ++i) decay_.push_back(decays(like.name(i)));
}

void AdamW::step(nn::ParamStore& params, const nn::ParamStore& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (decay_[i]) p *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
    p.array() -= cfg_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

BatchResult batch_gradient(const model::DistanceEstimator& net, std::span<const dataset::Sample* const> batch,
                           const mph::HeadBank& bank, const mph::LossConfig& loss, nn::ParamStore& grads) {
  BatchResult r;
  if (batch.empty()) return r;
  const double inv = 1.0 / static_cast<double>(batch.size());
  model::Tape tape;
  for (const dataset::Sample* s : batch) {
    const auto target = dataset::encode_targets(s->d_r, bank);
    const auto out = net.forward(s->observation, tape);
    auto terms = mph::mph_loss(out, target, s->d_r.norm(), bank, loss);
    r.loss += inv * terms.total;
    r.distance_loss += inv * terms.distance;
    for (auto& d : terms.grad.distances) d *= inv;
    terms.grad.logits *= inv;
    net.backward(tape, terms.grad, grads);
  }
  return r;
}

double close_range_error(const model::DistanceEstimator& net, const std::vector<dataset::Sample>& data,
                         const mph::HeadBank& bank, double threshold) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : data) {
    if (s.d_r.norm() >= threshold) continue;
    const auto dec = mph::select_and_decode(net.forward(s.observation), bank);
    sum += (dec.distance - s.d_r).norm();
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
}

TrainResult train(model::DistanceEstimator& net, const std::vector<dataset::Sample>& data, const mph::HeadBank& bank,
                  const mph::LossConfig& loss, const OptimizerConfig& opt, std::uint64_t seed,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  opt.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (static_cast<std::size_t>(net.config().perception_heads) != bank.size()) {
    throw std::invalid_argument("model head count does not match the head bank");
  }
  std::mt19937_64 rng(seed);
  AdamW adam(net.params(), opt);
  nn::ParamStore grads = net.params().zeros_like();
  std::vector<const dataset::Sample*> order(data.size());
  std::transform(data.begin(), data.end(), order.begin(), [](const auto& s) { return &s; });

  TrainResult result;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, dist_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      grads.set_zero();
      BatchResult br;
      try {
        br = batch_gradient(net, std::span(order).subspan(start, end - start), bank, loss, grads);
      } catch (const model::NonFiniteError& e) {
        throw DivergenceError(epoch, "epoch " + std::to_string(epoch) + ": " + e.what());
      } catch (const std::invalid_argument& e) {
        throw DivergenceError(epoch, "epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(br.loss) || !grads.all_finite()) {
        throw DivergenceError(epoch, "loss diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += br.loss * static_cast<double>(end - start);
      dist_sum += br.distance_loss * static_cast<double>(end - start);
      adam.step(net.params(), grads);
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(data.size());
    log.distance_loss = dist_sum / static_cast<double>(data.size());
    log.close_range_error = close_range_error(net, data, bank, opt.close_range);
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace detservo::train
