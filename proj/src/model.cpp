#include "detservo/model.hpp"

#include <cmath>
#include <random>

namespace detservo::model {

using nn::Mat;

std::string to_string(Architecture a) { return a == Architecture::kPlain ? "plain" : "transformer"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "transformer") return Architecture::kTransformer;
  if (s == "plain") return Architecture::kPlain;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

void ModelConfig::validate() const {
  if (image_height <= 0 || image_width <= 0 || channels <= 0) throw std::invalid_argument("bad image shape");
  if (token_grid <= 0) throw std::invalid_argument("token grid must be positive");
  int h = image_height, w = image_width;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (conv_channels[i] <= 0) throw std::invalid_argument("conv channel counts must be positive");
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  if (h != token_grid || w != token_grid) {
    throw std::invalid_argument("conv stack of " + std::to_string(conv_channels.size()) +
                                " stride-2 layers does not reduce the image to the token grid");
  }
  if (!std::isfinite(input_center) || !std::isfinite(input_scale) || input_scale <= 0.0) {
    throw std::invalid_argument("input normalization must be finite with a positive scale");
  }
  if (!std::isfinite(position_scale) || position_scale < 0.0) throw std::invalid_argument("bad position_scale");
  if (!std::isfinite(conv_init_gain) || conv_init_gain <= 0.0) throw std::invalid_argument("bad conv_init_gain");
  if (perception_heads <= 0) throw std::invalid_argument("need at least one perception head");
  if (mlp_hidden <= 0) throw std::invalid_argument("mlp_hidden must be positive");
  if (architecture == Architecture::kTransformer) {
    if (embed_dim <= 0 || embed_dim % 4 != 0) throw std::invalid_argument("embed_dim must be a positive multiple of 4");
    if (attention_heads <= 0 || embed_dim % attention_heads != 0) {
      throw std::invalid_argument("embed_dim must be divisible by attention_heads");
    }
    if (encoder_layers < 0 || decoder_layers < 0 || ffn_dim <= 0) throw std::invalid_argument("bad layer sizes");
  } else if (perception_heads != 1) {
    throw std::invalid_argument("the plain architecture has exactly one head");
  }
}

DistanceEstimator::DistanceEstimator(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.embed_dim;
  for (int cam = 0; cam < 2; ++cam) {
    const std::string pre = "tok" + std::to_string(cam);
    int in = config_.channels;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
      tokenizers_[cam].convs.push_back(
          nn::Conv2d::create(params_, pre + ".conv" + std::to_string(i), in, config_.conv_channels[i]));
      in = config_.conv_channels[i];
    }
    if (config_.architecture == Architecture::kTransformer) {
      tokenizers_[cam].proj = nn::Linear::create(params_, pre + ".proj", in, d);
    }
  }
  const int feat = config_.conv_channels.empty() ? config_.channels : config_.conv_channels.back();
  const int m = config_.mlp_hidden;
  if (config_.architecture == Architecture::kPlain) {
    const nn::Index in = 2 * static_cast<nn::Index>(config_.tokens_per_image()) * feat + 2;
    plain_ = {nn::Linear::create(params_, "plain.fc1", in, m), nn::Linear::create(params_, "plain.fc2", m, m),
              nn::Linear::create(params_, "plain.fc3", m, 3)};
    return;
  }
  pos_ = config_.position_scale * nn::sinusoidal_2d(config_.token_grid, d);
  angle_proj_ = nn::Linear::create(params_, "angle.proj", 2, d);
  angle_pos_ = params_.add("angle.pos", 1, d);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string pre = "enc" + std::to_string(l);
    encoder_.push_back({nn::LayerNorm::create(params_, pre + ".ln1", d),
                        nn::MultiHeadAttention::create(params_, pre + ".attn", d, config_.attention_heads),
                        nn::LayerNorm::create(params_, pre + ".ln2", d),
                        nn::FeedForward::create(params_, pre + ".ffn", d, config_.ffn_dim)});
  }
  encoder_norm_ = nn::LayerNorm::create(params_, "enc_norm", d);
  queries_ = params_.add("queries", config_.perception_heads, d);
  for (int l = 0; l < config_.decoder_layers; ++l) {
    const std::string pre = "dec" + std::to_string(l);
    decoder_.push_back({nn::LayerNorm::create(params_, pre + ".ln1", d),
                        nn::MultiHeadAttention::create(params_, pre + ".self", d, config_.attention_heads),
                        nn::LayerNorm::create(params_, pre + ".ln2", d),
                        nn::MultiHeadAttention::create(params_, pre + ".cross", d, config_.attention_heads),
                        nn::LayerNorm::create(params_, pre + ".ln3", d),
                        nn::FeedForward::create(params_, pre + ".ffn", d, config_.ffn_dim)});
  }
  decoder_norm_ = nn::LayerNorm::create(params_, "dec_norm", d);
  for (int h = 0; h < config_.perception_heads; ++h) {
    const std::string pre = "head" + std::to_string(h);
    heads_.push_back({nn::Linear::create(params_, pre + ".fc1", d, m), nn::Linear::create(params_, pre + ".fc2", m, m),
                      nn::Linear::create(params_, pre + ".fc3", m, 3)});
  }
  confidence_ = nn::Linear::create(params_, "conf", d, 1);
}

DistanceEstimator DistanceEstimator::create(const ModelConfig& config, std::uint64_t seed) {
  DistanceEstimator net(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto& p = net.params_;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.name(i);
    Mat& t = p[i];
    const auto ends_with = [&](const std::string& s) {
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".b") || ends_with(".beta") || ends_with(".gamma")) continue;
    double scale = 1.0;
    if (name == "queries") {
      scale = 1.0;
    } else if (name == "angle.pos") {
      scale = 0.1;
    } else if (name.find(".conv") != std::string::npos) {
      scale = config.conv_init_gain * std::sqrt(2.0 / static_cast<double>(t.cols()));
    } else {
      scale = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    }
    for (nn::Index k = 0; k < t.size(); ++k) t.data()[k] = scale * gauss(rng);
  }
  return net;
}

void DistanceEstimator::check_image(const scene::Image& image) const {
  if (image.height != config_.image_height || image.width != config_.image_width ||
      image.channels != config_.channels ||
      image.data.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw std::invalid_argument("image shape does not match the model configuration");
  }
}

Mat DistanceEstimator::run_tokenizer(const scene::Image& image, int camera, TokenizerTape& tape) const {
  check_image(image);
  const int c = image.channels;
  const nn::Index px = static_cast<nn::Index>(image.height) * image.width;
  tape.input.resize(c, px);
  for (nn::Index i = 0; i < px; ++i) {
    for (int ch = 0; ch < c; ++ch) tape.input(ch, i) = (image.data[i * c + ch] - config_.input_center) * config_.input_scale;
  }
  const auto& tok = tokenizers_[camera];
  tape.cols.resize(tok.convs.size());
  tape.pre.resize(tok.convs.size());
  tape.act.resize(tok.convs.size());
  int h = image.height, w = image.width;
  const Mat* x = &tape.input;
  for (std::size_t i = 0; i < tok.convs.size(); ++i) {
    tape.pre[i] = tok.convs[i].forward(params_, *x, h, w, tape.cols[i]);
    tape.act[i] = nn::gelu(tape.pre[i]);
    x = &tape.act[i];
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  tape.features = x->transpose();
  return tape.features;
}

void DistanceEstimator::backprop_tokenizer(const TokenizerTape& tape, int camera, const Mat& d_features,
                                           nn::ParamStore& grads) const {
  const auto& tok = tokenizers_[camera];
  Mat d = d_features.transpose();
  std::vector<int> heights{config_.image_height}, widths{config_.image_width};
  for (std::size_t i = 0; i < tok.convs.size(); ++i) {
    heights.push_back((heights.back() - 1) / 2 + 1);
    widths.push_back((widths.back() - 1) / 2 + 1);
  }
  for (std::size_t i = tok.convs.size(); i-- > 0;) {
    const Mat d_pre = nn::gelu_backward(tape.pre[i], d);
    d = tok.convs[i].backward(params_, tape.cols[i], d_pre, heights[i], widths[i], grads);
  }
}

Mat DistanceEstimator::run_mlp(const Mlp& mlp, const Mat& x, MlpTape& t) const {
  t.x = x;
  t.pre1 = mlp.l1.forward(params_, x);
  t.act1 = nn::gelu(t.pre1);
  t.pre2 = mlp.l2.forward(params_, t.act1);
  t.act2 = nn::gelu(t.pre2);
  return mlp.l3.forward(params_, t.act2);
}

Mat DistanceEstimator::backprop_mlp(const Mlp& mlp, const MlpTape& t, const Mat& dy, nn::ParamStore& grads) const {
  Mat d = mlp.l3.backward(params_, t.act2, dy, grads);
  d = mlp.l2.backward(params_, t.act1, nn::gelu_backward(t.pre2, d), grads);
  return mlp.l1.backward(params_, t.x, nn::gelu_backward(t.pre1, d), grads);
}

Mat DistanceEstimator::tokenize(const scene::Image& image, int camera) const {
  if (config_.architecture != Architecture::kTransformer) throw std::logic_error("plain model has no token projection");
  TokenizerTape tape;
  Mat tokens = tokenizers_[camera].proj.forward(params_, run_tokenizer(image, camera, tape));
  return tokens + pos_;
}

Mat DistanceEstimator::embed_angles(double yaw, double pitch) const {
  Mat a(1, 2);
  a << yaw, pitch;
  return angle_proj_.forward(params_, a) + params_[angle_pos_];
}

mph::HeadOutputs DistanceEstimator::forward(const scene::Observation& obs) const {
  Tape tape;
  return forward(obs, tape);
}

namespace {

void require_finite(const Mat& m, const std::string& where) {
  if (!m.allFinite()) throw NonFiniteError("non-finite activations after " + where);
}

}  // namespace

mph::HeadOutputs DistanceEstimator::forward(const scene::Observation& obs, Tape& tape) const {
  if (!std::isfinite(obs.head_yaw) || !std::isfinite(obs.head_pitch)) throw std::invalid_argument("non-finite head angles");
  const Mat f_head = run_tokenizer(obs.head_image, 0, tape.tokenizers[0]);
  const Mat f_torso = run_tokenizer(obs.torso_image, 1, tape.tokenizers[1]);
  require_finite(f_head, "head tokenizer");
  require_finite(f_torso, "torso tokenizer");

  mph::HeadOutputs out;
  if (config_.architecture == Architecture::kPlain) {
    const nn::Index n = f_head.size();
    Mat x(1, 2 * n + 2);
    nn::Index k = 0;
    for (const Mat* f : {&f_head, &f_torso}) {
      for (nn::Index r = 0; r < f->rows(); ++r) {
        for (nn::Index c = 0; c < f->cols(); ++c) x(0, k++) = (*f)(r, c);
      }
    }
    x(0, k++) = obs.head_yaw;
    x(0, k++) = obs.head_pitch;
    const Mat y = run_mlp(plain_, x, tape.plain);
    require_finite(y, "plain regressor");
    out.distances = {Vec3(y(0, 0), y(0, 1), y(0, 2))};
    out.logits = Eigen::VectorXd::Zero(1);
    return out;
  }

  const int g2 = config_.tokens_per_image();
  const int d = config_.embed_dim;
  Mat x(2 * g2 + 1, d);
  x.topRows(g2) = tokenizers_[0].proj.forward(params_, f_head) + pos_;
  x.middleRows(g2, g2) = tokenizers_[1].proj.forward(params_, f_torso) + pos_;
  tape.angles.resize(1, 2);
  tape.angles << obs.head_yaw, obs.head_pitch;
  x.bottomRows(1) = angle_proj_.forward(params_, tape.angles) + params_[angle_pos_];
  return forward_tokens(std::move(x), tape);
}

mph::HeadOutputs DistanceEstimator::forward_tokens(Mat x, Tape& tape) const {
  if (config_.architecture != Architecture::kTransformer) throw std::logic_error("plain model has no token sequence");
  if (x.cols() != config_.embed_dim || x.rows() < 1) throw std::invalid_argument("token matrix has the wrong width");
  mph::HeadOutputs out;
  tape.encoder.resize(encoder_.size());
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const auto& L = encoder_[l];
    auto& T = tape.encoder[l];
    const Mat h1 = L.ln1.forward(params_, x, T.ln1);
    x += L.attn.forward(params_, h1, h1, T.attn);
    const Mat h2 = L.ln2.forward(params_, x, T.ln2);
    x += L.ffn.forward(params_, h2, T.ffn);
    require_finite(x, "encoder layer " + std::to_string(l));
  }
  const Mat memory = encoder_norm_.forward(params_, x, tape.encoder_norm);

  Mat t = params_[queries_];
  tape.decoder.resize(decoder_.size());
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& L = decoder_[l];
    auto& T = tape.decoder[l];
    const Mat h1 = L.ln1.forward(params_, t, T.ln1);
    t += L.self_attn.forward(params_, h1, h1, T.self_attn);
    const Mat h2 = L.ln2.forward(params_, t, T.ln2);
    t += L.cross_attn.forward(params_, h2, memory, T.cross_attn);
    const Mat h3 = L.ln3.forward(params_, t, T.ln3);
    t += L.ffn.forward(params_, h3, T.ffn);
    require_finite(t, "decoder layer " + std::to_string(l));
  }
  tape.decoded = decoder_norm_.forward(params_, t, tape.decoder_norm);

  const int nh = config_.perception_heads;
  tape.heads.resize(nh);
  out.distances.resize(nh);
  out.logits = confidence_.forward(params_, tape.decoded).col(0);
  for (int h = 0; h < nh; ++h) {
    const Mat y = run_mlp(heads_[h], tape.decoded.row(h), tape.heads[h]);
    out.distances[h] = Vec3(y(0, 0), y(0, 1), y(0, 2));
  }
  require_finite(out.logits, "confidence layer");
  for (const auto& v : out.distances) {
    if (!v.allFinite()) throw NonFiniteError("non-finite activations after distance heads");
  }
  return out;
}

void DistanceEstimator::backward(const Tape& tape, const mph::HeadOutputs& g_out, nn::ParamStore& grads) const {
  const int nh = config_.perception_heads;
  if (g_out.distances.size() != static_cast<std::size_t>(nh) || g_out.logits.size() != nh) {
    throw std::invalid_argument("output gradient does not match the head count");
  }

  if (config_.architecture == Architecture::kPlain) {
    Mat dy(1, 3);
    dy << g_out.distances[0].x(), g_out.distances[0].y(), g_out.distances[0].z();
    const Mat dx = backprop_mlp(plain_, tape.plain, dy, grads);
    const auto& fh = tape.tokenizers[0].features;
    const nn::Index rows = fh.rows(), cols = fh.cols();
    Mat d_feat[2] = {Mat(rows, cols), Mat(rows, cols)};
    nn::Index k = 0;
    for (auto& df : d_feat) {
      for (nn::Index r = 0; r < rows; ++r) {
        for (nn::Index c = 0; c < cols; ++c) df(r, c) = dx(0, k++);
      }
    }
    backprop_tokenizer(tape.tokenizers[0], 0, d_feat[0], grads);
    backprop_tokenizer(tape.tokenizers[1], 1, d_feat[1], grads);
    return;
  }

  const int d = config_.embed_dim;
  Mat d_decoded = Mat::Zero(nh, d);
  d_decoded += confidence_.backward(params_, tape.decoded, Mat(g_out.logits), grads);
  for (int h = 0; h < nh; ++h) {
    Mat dy(1, 3);
    dy << g_out.distances[h].x(), g_out.distances[h].y(), g_out.distances[h].z();
    d_decoded.row(h) += backprop_mlp(heads_[h], tape.heads[h], dy, grads);
  }

  Mat dt = decoder_norm_.backward(params_, tape.decoder_norm, d_decoded, grads);
  const int g2 = config_.tokens_per_image();
  Mat d_memory = Mat::Zero(2 * g2 + 1, d);
  for (std::size_t l = decoder_.size(); l-- > 0;) {
    const auto& L = decoder_[l];
    const auto& T = tape.decoder[l];
    dt += L.ln3.backward(params_, T.ln3, L.ffn.backward(params_, T.ffn, dt, grads), grads);
    auto [dq_c, dkv_c] = L.cross_attn.backward(params_, T.cross_attn, dt, grads);
    d_memory += dkv_c;
    dt += L.ln2.backward(params_, T.ln2, dq_c, grads);
    auto [dq_s, dkv_s] = L.self_attn.backward(params_, T.self_attn, dt, grads);
    dt += L.ln1.backward(params_, T.ln1, dq_s + dkv_s, grads);
  }
  grads[queries_] += dt;

  Mat dx = encoder_norm_.backward(params_, tape.encoder_norm, d_memory, grads);
  for (std::size_t l = encoder_.size(); l-- > 0;) {
    const auto& L = encoder_[l];
    const auto& T = tape.encoder[l];
    dx += L.ln2.backward(params_, T.ln2, L.ffn.backward(params_, T.ffn, dx, grads), grads);
    auto [dq, dkv] = L.attn.backward(params_, T.attn, dx, grads);
    dx += L.ln1.backward(params_, T.ln1, dq + dkv, grads);
  }

  const Mat d_angle = dx.bottomRows(1);
  grads[angle_pos_] += d_angle;
  angle_proj_.backward(params_, tape.angles, d_angle, grads);
  for (int cam = 0; cam < 2; ++cam) {
    const Mat d_tokens = dx.middleRows(cam * g2, g2);
    const Mat d_feat = tokenizers_[cam].proj.backward(params_, tape.tokenizers[cam].features, d_tokens, grads);
    backprop_tokenizer(tape.tokenizers[cam], cam, d_feat, grads);
  }
}

}  // namespace detservo::model
