#include "eediff/losses.hpp"

#include <cmath>
#include <sstream>

namespace eediff {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

LayerwiseMode parse_layerwise_mode(const std::string& name) {
  if (name == "ua") return LayerwiseMode::UncertaintyAware;
  if (name == "plain") return LayerwiseMode::Plain;
  throw ConfigError("unknown layer-wise loss '" + name + "' (expected ua|plain)");
}

std::string to_string(LayerwiseMode mode) {
  return mode == LayerwiseMode::UncertaintyAware ? "ua" : "plain";
}

void LossWeights::validate() const {
  if (!(lambda_u >= 0.0) || !(beta_ual >= 0.0)) {
    throw ConfigError("loss weights must be >= 0");
  }
}

double loss_simple(const Matrix& eps_hat, const Matrix& eps) {
  require_same_shape(eps_hat, eps, "loss_simple");
  return (eps_hat - eps).squaredNorm() / static_cast<double>(eps.size());
}

Matrix pseudo_uncertainty(const Matrix& pred, const Matrix& eps, const TokenLayout& layout) {
  require_same_shape(pred, eps, "pseudo_uncertainty");
  return layout.token_means((pred - eps).cwiseAbs()).array().tanh().matrix();
}

double loss_uncertainty(std::span<const Matrix> u, std::span<const Matrix> u_hat) {
  if (u.size() != u_hat.size()) {
    throw ShapeError("loss_uncertainty: layer count mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    require_same_shape(u[i], u_hat[i], "loss_uncertainty");
    total += (u[i] - u_hat[i]).squaredNorm() / static_cast<double>(u[i].size());
  }
  return total;
}

double loss_layerwise_plain(std::span<const Matrix> preds, const Matrix& eps,
                            const TokenLayout& layout, int depth) {
  if (static_cast<int>(preds.size()) != depth - 1) {
    std::ostringstream os;
    os << "loss_layerwise_plain: expected " << depth - 1 << " predictions, got " << preds.size();
    throw ShapeError(os.str());
  }
  double total = 0.0;
  for (const auto& p : preds) {
    require_same_shape(p, eps, "loss_layerwise_plain");
    total += layout.token_means((p - eps).array().square().matrix()).mean();
  }
  return total;
}

double loss_ual(std::span<const Matrix> preds, const Matrix& eps, std::span<const Matrix> u,
                const TokenLayout& layout) {
  if (preds.size() != u.size()) {
    throw ShapeError("loss_ual: prediction and uncertainty layer counts differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_same_shape(preds[i], eps, "loss_ual");
    const Matrix per_token = layout.token_means((preds[i] - eps).array().square().matrix());
    require_same_shape(per_token, u[i], "loss_ual");
    total += ((1.0 - u[i].array()) * per_token.array()).mean();
  }
  return total;
}

double loss_joint(double simple, double l_u, double l_layerwise, const LossWeights& weights) {
  const std::pair<const char*, double> parts[] = {
      {"simple", simple}, {"uncertainty", l_u}, {"layerwise", l_layerwise}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite loss component: ") + name);
    }
  }
  return simple + weights.lambda_u * l_u + weights.beta_ual * l_layerwise;
}

DetachedTargets detach_targets(std::span<const Matrix> preds, std::span<const Matrix> u,
                               const Matrix& eps, const TokenLayout& layout,
                               LayerwiseMode mode) {
  DetachedTargets out;
  for (const auto& p : preds) {
    out.u_hat.push_back(pseudo_uncertainty(p, eps, layout));
  }
  for (std::size_t i = 0; i + 1 < preds.size(); ++i) {
    if (mode == LayerwiseMode::UncertaintyAware) {
      out.layer_weights.push_back((1.0 - u[i].array()).matrix());
    } else {
      out.layer_weights.push_back(Matrix::Ones(u[i].rows(), u[i].cols()));
    }
  }
  return out;
}

LossComponents joint_objective(const Matrix& output, std::span<const Matrix> preds,
                               std::span<const Matrix> u, const Matrix& eps,
                               const TokenLayout& layout, const LossWeights& weights,
                               const DetachedTargets* frozen, LossGradients* grads) {
  const std::size_t n = preds.size();
  if (n < 2 || u.size() != n) {
    throw ShapeError("joint_objective: need matching per-layer predictions and uncertainties");
  }
  DetachedTargets local;
  if (frozen == nullptr) {
    local = detach_targets(preds, u, eps, layout, weights.layerwise);
    frozen = &local;
  }

  LossComponents c;
  c.simple = loss_simple(output, eps);
  c.uncertainty = loss_uncertainty(u, frozen->u_hat);

  const double elems = static_cast<double>(eps.size());
  if (grads != nullptr) {
    grads->doutput = (2.0 / elems) * (output - eps);
    grads->dpreds.assign(n, Matrix());
    grads->du.assign(n, Matrix());
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (grads != nullptr) {
      const double cnt = static_cast<double>(u[i].size());
      grads->du[i] = (2.0 * weights.lambda_u / cnt) * (u[i] - frozen->u_hat[i]);
    }
  }
  double layerwise = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Matrix diff = preds[i] - eps;
    const Matrix per_token = layout.token_means(diff.array().square().matrix());
    const Matrix& w = frozen->layer_weights[i];
    require_same_shape(per_token, w, "joint_objective");
    const double cnt = static_cast<double>(per_token.size());
    layerwise += (w.array() * per_token.array()).sum() / cnt;
    if (grads != nullptr) {
      // d/dpred of mean_tokens(w * token_mean(diff^2)).
      grads->dpreds[i] = (weights.beta_ual * 2.0 / cnt) *
                         (layout.spread_token_grad(w).array() * diff.array()).matrix();
    }
  }
  c.layerwise = layerwise;
  c.total = loss_joint(c.simple, c.uncertainty, c.layerwise, weights);
  return c;
}

}  // namespace eediff
