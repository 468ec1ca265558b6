#include "eediff/uem.hpp"

#include <cmath>
#include <utility>

namespace eediff {

Aggregation parse_aggregation(const std::string& name) {
  if (name == "mean") return Aggregation::Mean;
  if (name == "max") return Aggregation::Max;
  throw ConfigError("unknown uncertainty aggregation '" + name + "' (expected mean|max)");
}

std::string to_string(Aggregation agg) { return agg == Aggregation::Mean ? "mean" : "max"; }

UemHead::UemHead(const std::string& name, Index hidden, Index embed, int layer)
    : weight(name + ".weight", 1, hidden + embed), bias(name + ".bias", 1, 1),
      layer_index(layer), embed_dim(embed) {}

void ExitPolicy::validate(int depth) const {
  if (!(threshold >= 0.0)) {
    throw ConfigError("exit threshold must be >= 0");
  }
  if (min_layer < 1 || min_layer > depth) {
    throw ConfigError("exit.min_layer must lie in [1, depth]");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double aggregate(const RowVector& u_map, Aggregation agg) {
  if (u_map.size() == 0) {
    throw ShapeError("empty uncertainty map");
  }
  return agg == Aggregation::Mean ? u_map.mean() : u_map.maxCoeff();
}

Matrix uncertainty_logits(const Matrix& token_rows, const Matrix& temb, const UemHead& head,
                          Index tokens) {
  const Index hidden = head.hidden_dim();
  if (token_rows.cols() != hidden || temb.cols() != head.embed_dim ||
      token_rows.rows() != temb.rows() * tokens) {
    throw ShapeError("uncertainty head input dimension mismatch");
  }
  const auto w_tok = head.weight.value.leftCols(hidden);
  const auto w_time = head.weight.value.rightCols(head.embed_dim);
  const Vector per_row = token_rows * w_tok.transpose();
  const Vector per_sample = temb * w_time.transpose();
  const double b = head.bias.value(0, 0);
  Matrix out(temb.rows(), tokens);
  for (Index s = 0; s < temb.rows(); ++s) {
    for (Index k = 0; k < tokens; ++k) {
      out(s, k) = per_row(s * tokens + k) + per_sample(s) + b;
    }
  }
  return out;
}

Matrix uncertainty_backward(const Matrix& token_rows, const Matrix& temb, UemHead& head,
                            const Matrix& dlogits) {
  const Index hidden = head.hidden_dim();
  // Row-major flattening of dlogits matches the sample-major token row order.
  const Eigen::Map<const Vector> drow(dlogits.data(), dlogits.size());
  const Vector dsample = dlogits.rowwise().sum();
  head.weight.grad.leftCols(hidden) += drow.transpose() * token_rows;
  head.weight.grad.rightCols(head.embed_dim) += dsample.transpose() * temb;
  head.bias.grad(0, 0) += dlogits.sum();
  return drow * head.weight.value.leftCols(hidden);
}

UncertaintyRecord estimate_uncertainty(const Matrix& token_states, const RowVector& t_emb,
                                       const UemHead& head, int t, Aggregation agg,
                                       int layer) {
  Matrix temb(1, t_emb.size());
  temb.row(0) = t_emb;
  const Matrix logits = uncertainty_logits(token_states, temb, head, token_states.rows());
  UncertaintyRecord rec;
  rec.u_map = logits.row(0).unaryExpr([](double v) { return sigmoid(v); });
  rec.u_scalar = aggregate(rec.u_map, agg);
  rec.layer_index = layer > 0 ? layer : head.layer_index;
  rec.t = t;
  return rec;
}

bool exit_decision(const UncertaintyRecord& record, const ExitPolicy& policy) {
  return record.u_scalar < policy.threshold && record.layer_index >= policy.min_layer;
}

UncertaintyHeads::UncertaintyHeads(int depth, Index hidden_dim, Index embed_dim, bool shared,
                                   std::uint64_t seed)
    : shared_(shared), depth_(depth) {
  std::mt19937_64 rng(seed);
  const int count = shared ? 1 : depth;
  for (int i = 0; i < count; ++i) {
    const std::string name = shared ? "uem.shared" : "uem." + std::to_string(i + 1);
    UemHead head(name, hidden_dim, embed_dim, shared ? 0 : i + 1);
    init_normal(head.weight, 0.01, rng);
    heads_.push_back(std::move(head));
  }
}

const UemHead& UncertaintyHeads::for_layer(int layer) const {
  if (layer < 1 || layer > depth_) {
    throw RangeError("no uncertainty head for layer " + std::to_string(layer));
  }
  return heads_[shared_ ? 0 : static_cast<std::size_t>(layer - 1)];
}

UemHead& UncertaintyHeads::for_layer(int layer) {
  return const_cast<UemHead&>(std::as_const(*this).for_layer(layer));
}

}  // namespace eediff
