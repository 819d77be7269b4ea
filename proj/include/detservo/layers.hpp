/**
 * @file layers.hpp
 * @brief Parameter storage and differentiable building blocks for the
 *        distance-estimation network.
 *
 * Activations are token-major: a sequence of N tokens of width d is an
 * N x d matrix. Each layer's backward takes the forward cache, the upstream
 * gradient, accumulates parameter gradients into a ParamStore shaped like the
 * parameters and returns the gradient with respect to its input.
 */
#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace detservo::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

struct Tensor {
  std::string name;
  Mat value;
};

class ParamStore {
 public:
  /// Appends a zero tensor. Throws std::invalid_argument on duplicate names.
  std::size_t add(const std::string& name, Index rows, Index cols);

  std::size_t size() const { return tensors_.size(); }
  Mat& operator[](std::size_t i) { return tensors_[i].value; }
  const Mat& operator[](std::size_t i) const { return tensors_[i].value; }
  const std::string& name(std::size_t i) const { return tensors_[i].name; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::optional<std::size_t> find(const std::string& name) const;

  ParamStore zeros_like() const;
  void set_zero();
  Index scalar_count() const;
  /// this += scale * other (shapes must match)
  void add_scaled(const ParamStore& other, double scale);
  bool all_finite() const;
  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// tanh approximation of GELU.
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& pre, const Mat& dy);

struct Linear {
  std::size_t w = 0;  ///< out x in
  std::size_t b = 0;  ///< 1 x out
  Index in = 0;
  Index out = 0;

  static Linear create(ParamStore& p, const std::string& prefix, Index in, Index out);
  Mat forward(const ParamStore& p, const Mat& x) const;
  Mat backward(const ParamStore& p, const Mat& x, const Mat& dy, ParamStore& g) const;
};

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  double eps = 1e-5;

  static LayerNorm create(ParamStore& p, const std::string& prefix, Index dim);
  Mat forward(const ParamStore& p, const Mat& x, LayerNormCache& cache) const;
  Mat backward(const ParamStore& p, const LayerNormCache& cache, const Mat& dy, ParamStore& g) const;
};

struct AttentionCache {
  Mat q_in;
  Mat kv_in;
  Mat q, k, v;
  std::vector<Mat> probs;  ///< per attention head, Nq x Nk
  Mat concat;
};

/// Scaled dot-product multi-head attention with input and output projections.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  Index dim = 0;

  static MultiHeadAttention create(ParamStore& p, const std::string& prefix, Index dim, int heads);
  Mat forward(const ParamStore& p, const Mat& q_in, const Mat& kv_in, AttentionCache& cache) const;
  /// Returns {d q_in, d kv_in}.
  std::pair<Mat, Mat> backward(const ParamStore& p, const AttentionCache& cache, const Mat& dy, ParamStore& g) const;
};

struct FeedForwardCache {
  Mat x;
  Mat pre;
  Mat act;
};

struct FeedForward {
  Linear l1, l2;

  static FeedForward create(ParamStore& p, const std::string& prefix, Index dim, Index hidden);
  Mat forward(const ParamStore& p, const Mat& x, FeedForwardCache& cache) const;
  Mat backward(const ParamStore& p, const FeedForwardCache& cache, const Mat& dy, ParamStore& g) const;
};

/// 3x3 convolution, stride 2, zero padding 1. Feature maps are channel x (H*W), row-major pixels.
struct Conv2d {
  std::size_t w = 0;  ///< out_ch x (in_ch * 9)
  std::size_t b = 0;  ///< out_ch x 1
  int in_ch = 0;
  int out_ch = 0;

  static Conv2d create(ParamStore& p, const std::string& prefix, int in_ch, int out_ch);
  /// `cols` receives the im2col matrix needed by backward.
  Mat forward(const ParamStore& p, const Mat& x, int height, int width, Mat& cols) const;
  Mat backward(const ParamStore& p, const Mat& cols, const Mat& dy, int height, int width, ParamStore& g) const;
};

/// Fixed 2D sinusoidal embedding for a grid x grid token map, row-major
/// tokens. The first dim/2 channels encode the row, the rest the column; each
/// half interleaves sin/cos pairs at frequencies 10000^(-2i/(dim/2)).
Mat sinusoidal_2d(int grid, Index dim);

}  // namespace detservo::nn
