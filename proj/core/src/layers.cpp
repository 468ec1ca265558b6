#include "eediff/layers.hpp"

#include <cmath>

namespace eediff {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

void init_normal(Parameter& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = dist(rng);
  }
}

Linear::Linear(const std::string& name, Index in, Index out)
    : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

LayerNorm::LayerNorm(const std::string& name, Index dim)
    : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim) {
  gamma.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, LayerNormCache* cache) const {
  const Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix xhat(n, x.cols());
  Vector rstd(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    rstd(r) = 1.0 / std::sqrt(var + kEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Matrix y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix LayerNorm::backward(const LayerNormCache& cache, const Matrix& dy) {
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const double d = static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const double mean_g = dxhat.row(r).sum() / d;
    const double mean_gx = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = cache.rstd(r) *
                (dxhat.row(r).array() - mean_g - cache.xhat.row(r).array() * mean_gx);
  }
  return dx;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
}

Mlp::Mlp(const std::string& name, Index dim, Index hidden)
    : fc1(name + ".fc1", dim, hidden), fc2(name + ".fc2", hidden, dim) {}

namespace {

// tanh(c (x + a x^3)) through the vectorized exp: tanh(z) = 1 - 2 / (e^{2z} + 1).
Matrix gelu_tanh_inner(const Matrix& pre) {
  const auto x = pre.array();
  const auto z2 = 2.0 * kGeluC * (x + kGeluA * x.cube());
  return (1.0 - 2.0 / (z2.exp() + 1.0)).matrix();
}

}  // namespace

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
  Matrix pre = fc1.forward(x);
  Matrix th = gelu_tanh_inner(pre);
  Matrix act = (0.5 * pre.array() * (1.0 + th.array())).matrix();
  Matrix y = fc2.forward(act);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->tanh_inner = std::move(th);
    cache->act = std::move(act);
  }
  return y;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& dy) {
  Matrix dact = fc2.backward(cache.act, dy);
  const auto x = cache.pre.array();
  const auto th = cache.tanh_inner.array();
  const auto dinner = kGeluC * (1.0 + 3.0 * kGeluA * x.square());
  Matrix dpre = (dact.array() * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * dinner)).matrix();
  return fc1.backward(cache.x, dpre);
}

Attention::Attention(const std::string& name, Index dim, int num_heads)
    : qkv(name + ".qkv", dim, 3 * dim), proj(name + ".proj", dim, dim), heads(num_heads) {}

Matrix Attention::forward(const Matrix& x, Index tokens, AttentionCache* cache) const {
  const Index dim = proj.in_dim();
  const Index head_dim = dim / heads;
  const Index samples = x.rows() / tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Matrix qkv_out = qkv.forward(x);
  Matrix ctx(x.rows(), dim);
  Matrix probs(samples * heads * tokens, tokens);
  Matrix scores(tokens, tokens);
  for (Index s = 0; s < samples; ++s) {
    const Index r0 = s * tokens;
    for (Index h = 0; h < heads; ++h) {
      const auto q = qkv_out.block(r0, h * head_dim, tokens, head_dim);
      const auto k = qkv_out.block(r0, dim + h * head_dim, tokens, head_dim);
      const auto v = qkv_out.block(r0, 2 * dim + h * head_dim, tokens, head_dim);
      scores.noalias() = q * k.transpose();
      scores *= scale;
      for (Index i = 0; i < tokens; ++i) {
        const double mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      ctx.block(r0, h * head_dim, tokens, head_dim).noalias() = scores * v;
      probs.block((s * heads + h) * tokens, 0, tokens, tokens) = scores;
    }
  }
  Matrix y = proj.forward(ctx);
  if (cache != nullptr) {
    cache->x = x;
    cache->qkv = std::move(qkv_out);
    cache->probs = std::move(probs);
    cache->ctx = std::move(ctx);
  }
  return y;
}

Matrix Attention::backward(const AttentionCache& cache, Index tokens, const Matrix& dy) {
  const Index dim = proj.in_dim();
  const Index head_dim = dim / heads;
  const Index samples = cache.x.rows() / tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Matrix dctx = proj.backward(cache.ctx, dy);
  Matrix dqkv(cache.qkv.rows(), cache.qkv.cols());
  Matrix dprobs(tokens, tokens);
  Matrix dscores(tokens, tokens);
  for (Index s = 0; s < samples; ++s) {
    const Index r0 = s * tokens;
    for (Index h = 0; h < heads; ++h) {
      const auto q = cache.qkv.block(r0, h * head_dim, tokens, head_dim);
      const auto k = cache.qkv.block(r0, dim + h * head_dim, tokens, head_dim);
      const auto v = cache.qkv.block(r0, 2 * dim + h * head_dim, tokens, head_dim);
      const auto p = cache.probs.block((s * heads + h) * tokens, 0, tokens, tokens);
      const auto dout = dctx.block(r0, h * head_dim, tokens, head_dim);
      dprobs.noalias() = dout * v.transpose();
      dqkv.block(r0, 2 * dim + h * head_dim, tokens, head_dim).noalias() = p.transpose() * dout;
      for (Index i = 0; i < tokens; ++i) {
        const double dot = dprobs.row(i).dot(p.row(i));
        dscores.row(i) = p.row(i).array() * (dprobs.row(i).array() - dot) * scale;
      }
      dqkv.block(r0, h * head_dim, tokens, head_dim).noalias() = dscores * k;
      dqkv.block(r0, dim + h * head_dim, tokens, head_dim).noalias() = dscores.transpose() * q;
    }
  }
  return qkv.backward(cache.x, dqkv);
}

}  // namespace eediff
