/**
 * @file model.hpp
 * @brief Distance-estimation network: per-camera conv tokenizers with 2D
 *        sinusoidal positions, a head-angle token, a pre-norm transformer
 *        encoder, a query decoder with one query per perception head, per-head
 *        distance MLPs and a shared confidence layer.
 *
 * The plain architecture keeps the tokenizers and replaces everything after
 * them with one MLP over the flattened features and head angles.
 */
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "detservo/layers.hpp"
#include "detservo/mph.hpp"
#include "detservo/scene.hpp"

namespace detservo::model {

enum class Architecture { kTransformer, kPlain };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  int channels = 1;
  int token_grid = 8;
  std::vector<int> conv_channels{16, 32, 32};  ///< one stride-2 conv per halving to the token grid
  int embed_dim = 64;
  int attention_heads = 4;
  int ffn_dim = 128;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int perception_heads = 4;
  int mlp_hidden = 64;
  Architecture architecture = Architecture::kTransformer;
  double input_center = 0.25;   ///< tokenizer input is (intensity - center) * scale
  double input_scale = 4.0;
  double position_scale = 1.0;  ///< multiplier on the sinusoidal table
  double conv_init_gain = 2.0;  ///< multiplier on the He std of conv weights at init

  /// Throws std::invalid_argument on inconsistent shapes.
  void validate() const;
  int tokens_per_image() const { return token_grid * token_grid; }
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenizerTape {
  nn::Mat input;
  std::vector<nn::Mat> cols;
  std::vector<nn::Mat> pre;
  std::vector<nn::Mat> act;
  nn::Mat features;  ///< tokens x channels, before projection
};

struct EncoderTape {
  nn::LayerNormCache ln1;
  nn::AttentionCache attn;
  nn::LayerNormCache ln2;
  nn::FeedForwardCache ffn;
};

struct DecoderTape {
  nn::LayerNormCache ln1;
  nn::AttentionCache self_attn;
  nn::LayerNormCache ln2;
  nn::AttentionCache cross_attn;
  nn::LayerNormCache ln3;
  nn::FeedForwardCache ffn;
};

struct MlpTape {
  nn::Mat x, pre1, act1, pre2, act2;
};

/// Everything backward needs from one forward pass.
struct Tape {
  TokenizerTape tokenizers[2];
  nn::Mat angles;
  std::vector<EncoderTape> encoder;
  nn::LayerNormCache encoder_norm;
  std::vector<DecoderTape> decoder;
  nn::LayerNormCache decoder_norm;
  nn::Mat decoded;
  std::vector<MlpTape> heads;
  MlpTape plain;
};

class DistanceEstimator {
 public:
  /// Structure with all-zero parameters (layer norms at unit gain).
  explicit DistanceEstimator(const ModelConfig& config);
  /// Structure with seeded random initialization.
  static DistanceEstimator create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// camera 0 = head, 1 = torso. Returns tokens x embed_dim (transformer only).
  nn::Mat tokenize(const scene::Image& image, int camera) const;
  nn::Mat embed_angles(double yaw, double pitch) const;
  const nn::Mat& position_embedding() const { return pos_; }

  /// Throws std::invalid_argument on shape mismatch, NonFiniteError on
  /// non-finite activations.
  mph::HeadOutputs forward(const scene::Observation& obs) const;
  mph::HeadOutputs forward(const scene::Observation& obs, Tape& tape) const;

  /// Encoder, decoder and heads on an already embedded token sequence
  /// (head tokens, torso tokens, angle token). Transformer only.
  mph::HeadOutputs forward_tokens(nn::Mat tokens, Tape& tape) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(outputs).
  void backward(const Tape& tape, const mph::HeadOutputs& output_grad, nn::ParamStore& grads) const;

 private:
  struct Tokenizer {
    std::vector<nn::Conv2d> convs;
    nn::Linear proj;
  };
  struct EncoderLayer {
    nn::LayerNorm ln1;
    nn::MultiHeadAttention attn;
    nn::LayerNorm ln2;
    nn::FeedForward ffn;
  };
  struct DecoderLayer {
    nn::LayerNorm ln1;
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln2;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm ln3;
    nn::FeedForward ffn;
  };
  struct Mlp {
    nn::Linear l1, l2, l3;
  };

  nn::Mat run_tokenizer(const scene::Image& image, int camera, TokenizerTape& tape) const;
  void backprop_tokenizer(const TokenizerTape& tape, int camera, const nn::Mat& d_features,
                          nn::ParamStore& grads) const;
  nn::Mat run_mlp(const Mlp& mlp, const nn::Mat& x, MlpTape& tape) const;
  nn::Mat backprop_mlp(const Mlp& mlp, const MlpTape& tape, const nn::Mat& dy, nn::ParamStore& grads) const;
  void check_image(const scene::Image& image) const;

  ModelConfig config_;
  nn::ParamStore params_;
  nn::Mat pos_;
  Tokenizer tokenizers_[2];
  nn::Linear angle_proj_;
  std::size_t angle_pos_ = 0;
  std::vector<EncoderLayer> encoder_;
  nn::LayerNorm encoder_norm_;
  std::size_t queries_ = 0;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm decoder_norm_;
  std::vector<Mlp> heads_;
  nn::Linear confidence_;
  Mlp plain_;
};

}  // namespace detservo::model
