#include "eediff/model.hpp"

namespace eediff {

EarlyExitModel::EarlyExitModel(const BackboneConfig& config, bool share_uem, std::uint64_t seed)
    : backbone(config, seed),
      uem(config.depth, config.hidden_dim, config.hidden_dim, share_uem, seed ^ 0x9e3779b97f4a7c15ULL) {}

std::vector<Parameter*> EarlyExitModel::parameters() {
  std::vector<Parameter*> out;
  for_each_parameter([&](Parameter& p) { out.push_back(&p); });
  return out;
}

void EarlyExitModel::zero_grad() {
  for_each_parameter([](Parameter& p) { p.zero_grad(); });
}

ObjectiveResult evaluate_objective(EarlyExitModel& model, const Matrix& x_t,
                                   const std::vector<int>& timesteps, const Matrix& eps,
                                   const LossWeights& weights, bool backprop,
                                   const DetachedTargets* frozen) {
  Denoiser& net = model.backbone;
  if (eps.rows() != x_t.rows() || eps.cols() != x_t.cols()) {
    throw ShapeError("objective: noise shape differs from input shape");
  }
  const TrainForward fwd = net.forward_train(x_t, timesteps);
  const auto n = static_cast<std::size_t>(net.depth());
  const Index tokens = net.layout().data_tokens();

  std::vector<Matrix> rows(n);
  ObjectiveResult out;
  out.u.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = net.data_rows(fwd.hidden[i]);
    const Matrix logits =
        uncertainty_logits(rows[i], fwd.temb, model.uem.for_layer(static_cast<int>(i) + 1), tokens);
    out.u[i] = logits.unaryExpr([](double v) { return sigmoid(v); });
  }
  out.detached = frozen != nullptr
                     ? *frozen
                     : detach_targets(fwd.preds, out.u, eps, net.layout(), weights.layerwise);

  LossGradients grads;
  out.loss = joint_objective(fwd.output, fwd.preds, out.u, eps, net.layout(), weights,
                             &out.detached, backprop ? &grads : nullptr);

  const Matrix sq = (fwd.output - eps).array().square().matrix();
  out.per_sample_simple.resize(static_cast<std::size_t>(x_t.rows()));
  for (Index r = 0; r < x_t.rows(); ++r) {
    out.per_sample_simple[static_cast<std::size_t>(r)] = sq.row(r).mean();
  }
  if (!backprop) {
    return out;
  }

  const Index lt = net.tokens_per_sample();
  const Index batch = x_t.rows();
  std::vector<Matrix> dhidden(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix dlogits =
        (grads.du[i].array() * out.u[i].array() * (1.0 - out.u[i].array())).matrix();
    const Matrix drows = uncertainty_backward(rows[i], fwd.temb,
                                              model.uem.for_layer(static_cast<int>(i) + 1), dlogits);
    dhidden[i] = Matrix::Zero(batch * lt, net.hidden_dim());
    for (Index s = 0; s < batch; ++s) {
      dhidden[i].middleRows(s * lt + 1, tokens) = drows.middleRows(s * tokens, tokens);
    }
  }
  net.backward(fwd, grads.dpreds, grads.doutput, dhidden);
  return out;
}

}  // namespace eediff
