#pragma once

#include "eediff/backbone.hpp"
#include "eediff/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace eediff {

enum class LayerwiseMode {
  UncertaintyAware,  // sum_i (1 - u_i) ||g_i - eps||^2
  Plain,             // sum_i ||g_i - eps||^2
};

LayerwiseMode parse_layerwise_mode(const std::string& name);
std::string to_string(LayerwiseMode mode);

struct LossWeights {
  double lambda_u = 1.0;
  double beta_ual = 1.0;
  LayerwiseMode layerwise = LayerwiseMode::UncertaintyAware;

  void validate() const;
};

struct LossComponents {
  double simple = 0.0;
  double uncertainty = 0.0;
  double layerwise = 0.0;
  double total = 0.0;
};

// Mean squared error over every element.
double loss_simple(const Matrix& eps_hat, const Matrix& eps);

// tanh of the per-token mean absolute error; B x tokens.
Matrix pseudo_uncertainty(const Matrix& pred, const Matrix& eps, const TokenLayout& layout);

// sum over layers of the per-layer token mean of (u - u_hat)^2.
double loss_uncertainty(std::span<const Matrix> u, std::span<const Matrix> u_hat);

// preds holds g_1..g_{N-1}; the final layer is excluded.
double loss_layerwise_plain(std::span<const Matrix> preds, const Matrix& eps,
                            const TokenLayout& layout, int depth);

// (1 - u) applied per token to the per-token mean squared error, then meaned.
double loss_ual(std::span<const Matrix> preds, const Matrix& eps, std::span<const Matrix> u,
                const TokenLayout& layout);

// simple + lambda * L_u + beta * L_layerwise; non-finite parts are reported by name.
double loss_joint(double simple, double l_u, double l_layerwise, const LossWeights& weights);

// Targets that enter the objective as constants: u_hat for L_u and the
// per-token layer weights (1 - u) for the layer-wise term.
struct DetachedTargets {
  std::vector<Matrix> u_hat;          // N entries
  std::vector<Matrix> layer_weights;  // N - 1 entries
};

struct LossGradients {
  Matrix doutput;               // dL/d model output
  std::vector<Matrix> dpreds;   // dL/d g_i, N entries (last one empty)
  std::vector<Matrix> du;       // dL/d u_i, N entries
};

DetachedTargets detach_targets(std::span<const Matrix> preds, std::span<const Matrix> u,
                               const Matrix& eps, const TokenLayout& layout,
                               LayerwiseMode mode);

// Joint objective over all N layers with analytic gradients with respect to
// the model output, per-layer predictions and per-layer uncertainties. When
// `frozen` is null the detached targets are taken from the current values.
LossComponents joint_objective(const Matrix& output, std::span<const Matrix> preds,
                               std::span<const Matrix> u, const Matrix& eps,
                               const TokenLayout& layout, const LossWeights& weights,
                               const DetachedTargets* frozen, LossGradients* grads);

}  // namespace eediff
