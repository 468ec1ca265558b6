#pragma once

#include "eediff/common.hpp"

#include <random>
#include <string>
#include <vector>

namespace eediff {

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

void init_normal(Parameter& p, double stddev, std::mt19937_64& rng);

// y = x W + b with W stored (in x out).
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, Index in, Index out);

  Index in_dim() const { return weight.value.rows(); }
  Index out_dim() const { return weight.value.cols(); }

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Parameter gamma;
  Parameter beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim);

  Matrix forward(const Matrix& x, LayerNormCache* cache = nullptr) const;
  Matrix backward(const LayerNormCache& cache, const Matrix& dy);

  template <typename F>
  void for_each_parameter(F&& f) {
    f(gamma);
    f(beta);
  }
};

double gelu(double x);
double gelu_derivative(double x);

struct MlpCache {
  Matrix x;
  Matrix pre;
  Matrix tanh_inner;
  Matrix act;
};

struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(const std::string& name, Index dim, Index hidden);

  Matrix forward(const Matrix& x, MlpCache* cache = nullptr) const;
  Matrix backward(const MlpCache& cache, const Matrix& dy);

  template <typename F>
  void for_each_parameter(F&& f) {
    fc1.for_each_parameter(f);
    fc2.for_each_parameter(f);
  }
};

struct AttentionCache {
  Matrix x;
  Matrix qkv;
  Matrix probs;  // (samples * heads * tokens) x tokens
  Matrix ctx;
};

// Multi-head self-attention over sequences of `tokens` consecutive rows.
struct Attention {
  Linear qkv;
  Linear proj;
  int heads = 1;

  Attention() = default;
  Attention(const std::string& name, Index dim, int num_heads);

  Matrix forward(const Matrix& x, Index tokens, AttentionCache* cache = nullptr) const;
  Matrix backward(const AttentionCache& cache, Index tokens, const Matrix& dy);

  template <typename F>
  void for_each_parameter(F&& f) {
    qkv.for_each_parameter(f);
    proj.for_each_parameter(f);
  }
};

}  // namespace eediff
