#include "detservo/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace detservo::nn {

std::size_t ParamStore::add(const std::string& name, Index rows, Index cols) {
  if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter name " + name);
  index_[name] = tensors_.size();
  tensors_.push_back({name, Mat::Zero(rows, cols)});
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& t : tensors_) out.add(t.name, t.value.rows(), t.value.cols());
  return out;
}

void ParamStore::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  if (other.size() != size()) throw std::invalid_argument("parameter stores differ in layout");
  for (std::size_t i = 0; i < size(); ++i) tensors_[i].value += scale * other.tensors_[i].value;
}

bool ParamStore::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
}

Mat gelu_backward(const Mat& pre, const Mat& dy) {
  return pre.binaryExpr(dy, [](double v, double g) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    return g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
  });
}

Linear Linear::create(ParamStore& p, const std::string& prefix, Index in, Index out) {
  Linear l;
  l.w = p.add(prefix + ".w", out, in);
  l.b = p.add(prefix + ".b", 1, out);
  l.in = in;
  l.out = out;
  return l;
}

Mat Linear::forward(const ParamStore& p, const Mat& x) const {
  Mat y = x * p[w].transpose();
  y.rowwise() += p[b].row(0);
  return y;
}

Mat Linear::backward(const ParamStore& p, const Mat& x, const Mat& dy, ParamStore& g) const {
  g[w].noalias() += dy.transpose() * x;
  g[b] += dy.colwise().sum();
  return dy * p[w];
}

LayerNorm LayerNorm::create(ParamStore& p, const std::string& prefix, Index dim) {
  LayerNorm ln;
  ln.gamma = p.add(prefix + ".gamma", 1, dim);
  ln.beta = p.add(prefix + ".beta", 1, dim);
  p[ln.gamma].setOnes();
  return ln;
}

Mat LayerNorm::forward(const ParamStore& p, const Mat& x, LayerNormCache& c) const {
  const Index n = x.rows();
  const Index d = x.cols();
  c.xhat.resize(n, d);
  c.inv_std.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    c.inv_std[i] = 1.0 / std::sqrt(var + eps);
    c.xhat.row(i) = (x.row(i).array() - mean) * c.inv_std[i];
  }
  Mat y = c.xhat.array().rowwise() * p[gamma].row(0).array();
  y.rowwise() += p[beta].row(0);
  return y;
}

Mat LayerNorm::backward(const ParamStore& p, const LayerNormCache& c, const Mat& dy, ParamStore& g) const {
  g[gamma] += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g[beta] += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * p[gamma].row(0).array();
  Mat dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.inv_std[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& p, const std::string& prefix, Index dim, int heads) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("embedding dim must be divisible by attention heads");
  MultiHeadAttention a;
  a.wq = Linear::create(p, prefix + ".q", dim, dim);
  a.wk = Linear::create(p, prefix + ".k", dim, dim);
  a.wv = Linear::create(p, prefix + ".v", dim, dim);
  a.wo = Linear::create(p, prefix + ".o", dim, dim);
  a.heads = heads;
  a.dim = dim;
  return a;
}

Mat MultiHeadAttention::forward(const ParamStore& p, const Mat& q_in, const Mat& kv_in, AttentionCache& c) const {
  c.q_in = q_in;
  c.kv_in = kv_in;
  c.q = wq.forward(p, q_in);
  c.k = wk.forward(p, kv_in);
  c.v = wv.forward(p, kv_in);
  const Index dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.concat.resize(q_in.rows(), dim);
  c.probs.resize(heads);
  for (int h = 0; h < heads; ++h) {
    Mat s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
    for (Index i = 0; i < s.rows(); ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp();
      s.row(i) /= s.row(i).sum();
    }
    c.concat.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
    c.probs[h] = std::move(s);
  }
  return wo.forward(p, c.concat);
}

std::pair<Mat, Mat> MultiHeadAttention::backward(const ParamStore& p, const AttentionCache& c, const Mat& dy,
                                                 ParamStore& g) const {
  const Mat dconcat = wo.backward(p, c.concat, dy, g);
  const Index dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(c.q.rows(), dim), dk(c.k.rows(), dim), dv(c.v.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const Mat& prob = c.probs[h];
    const auto d_out = dconcat.middleCols(h * dh, dh);
    const Mat dp = d_out * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = prob.transpose() * d_out;
    const Vec row_dot = (dp.array() * prob.array()).rowwise().sum();
    const Mat ds = (prob.array() * (dp.colwise() - row_dot).array()) * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat dq_in = wq.backward(p, c.q_in, dq, g);
  Mat dkv_in = wk.backward(p, c.kv_in, dk, g);
  dkv_in += wv.backward(p, c.kv_in, dv, g);
  return {std::move(dq_in), std::move(dkv_in)};
}

FeedForward FeedForward::create(ParamStore& p, const std::string& prefix, Index dim, Index hidden) {
  return {Linear::create(p, prefix + ".fc1", dim, hidden), Linear::create(p, prefix + ".fc2", hidden, dim)};
}

Mat FeedForward::forward(const ParamStore& p, const Mat& x, FeedForwardCache& c) const {
  c.x = x;
  c.pre = l1.forward(p, x);
  c.act = gelu(c.pre);
  return l2.forward(p, c.act);
}

Mat FeedForward::backward(const ParamStore& p, const FeedForwardCache& c, const Mat& dy, ParamStore& g) const {
  const Mat dact = l2.backward(p, c.act, dy, g);
  return l1.backward(p, c.x, gelu_backward(c.pre, dact), g);
}

Conv2d Conv2d::create(ParamStore& p, const std::string& prefix, int in_ch, int out_ch) {
  Conv2d c;
  c.w = p.add(prefix + ".w", out_ch, in_ch * 9);
  c.b = p.add(prefix + ".b", out_ch, 1);
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  return c;
}

namespace {

int conv_out(int n) { return (n - 1) / 2 + 1; }

}  // namespace

Mat Conv2d::forward(const ParamStore& p, const Mat& x, int height, int width, Mat& cols) const {
  const int ho = conv_out(height);
  const int wo = conv_out(width);
  cols.setZero(static_cast<Index>(in_ch) * 9, static_cast<Index>(ho) * wo);
  for (int ci = 0; ci < in_ch; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Index row = ci * 9 + ky * 3 + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= width) continue;
            cols(row, oy * wo + ox) = x(ci, iy * width + ix);
          }
        }
      }
    }
  }
  Mat y = p[w] * cols;
  y.colwise() += p[b].col(0);
  return y;
}

Mat Conv2d::backward(const ParamStore& p, const Mat& cols, const Mat& dy, int height, int width,
                     ParamStore& g) const {
  g[w].noalias() += dy * cols.transpose();
  g[b] += dy.rowwise().sum();
  const Mat dcols = p[w].transpose() * dy;
  const int ho = conv_out(height);
  const int wo = conv_out(width);
  Mat dx = Mat::Zero(in_ch, static_cast<Index>(height) * width);
  for (int ci = 0; ci < in_ch; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Index row = ci * 9 + ky * 3 + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= width) continue;
            dx(ci, iy * width + ix) += dcols(row, oy * wo + ox);
          }
        }
      }
    }
  }
  return dx;
}

Mat sinusoidal_2d(int grid, Index dim) {
  if (dim % 4 != 0) throw std::invalid_argument("2D sinusoidal embedding needs dim divisible by 4");
  const Index half = dim / 2;
  Mat pe(static_cast<Index>(grid) * grid, dim);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const Index t = static_cast<Index>(r) * grid + c;
      for (Index i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        pe(t, 2 * i) = std::sin(r * freq);
        pe(t, 2 * i + 1) = std::cos(r * freq);
        pe(t, half + 2 * i) = std::sin(c * freq);
        pe(t, half + 2 * i + 1) = std::cos(c * freq);
      }
    }
  }
  return pe;
}

}  // namespace detservo::nn
