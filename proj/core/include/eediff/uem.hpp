#pragma once

#include "eediff/common.hpp"
#include "eediff/layers.hpp"

#include <random>
#include <string>
#include <vector>

namespace eediff {

enum class Aggregation { Mean, Max };

Aggregation parse_aggregation(const std::string& name);
std::string to_string(Aggregation agg);

// Linear probe over [token state, timestep embedding] followed by a sigmoid.
struct UemHead {
  Parameter weight;  // 1 x (hidden_dim + embedding_dim)
  Parameter bias;    // 1 x 1
  int layer_index = 0;

  UemHead() = default;
  UemHead(const std::string& name, Index hidden_dim, Index embed_dim, int layer);

  Index hidden_dim() const { return weight.value.cols() - embed_dim; }
  Index embed_dim = 0;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

struct UncertaintyRecord {
  RowVector u_map;  // one entry per data token
  double u_scalar = 0.0;
  int layer_index = 0;
  int t = 0;
};

struct ExitPolicy {
  double threshold = 0.0;
  Aggregation aggregation = Aggregation::Mean;
  int min_layer = 1;

  void validate(int depth) const;
};

double sigmoid(double x);
double aggregate(const RowVector& u_map, Aggregation agg);

// Per-token uncertainty for a single sample: token_states is (tokens x hidden),
// t_emb has the embedding width the head was built for. `layer` overrides the
// head's own index, which a shared head does not carry.
UncertaintyRecord estimate_uncertainty(const Matrix& token_states, const RowVector& t_emb,
                                       const UemHead& head, int t,
                                       Aggregation agg = Aggregation::Mean, int layer = 0);

// Batched logits: token_rows is (B * tokens) x hidden, temb is B x embed.
// Returns B x tokens pre-sigmoid values.
Matrix uncertainty_logits(const Matrix& token_rows, const Matrix& temb, const UemHead& head,
                          Index tokens);

// Accumulates head gradients from dL/dlogits and returns dL/dtoken_rows.
Matrix uncertainty_backward(const Matrix& token_rows, const Matrix& temb, UemHead& head,
                            const Matrix& dlogits);

bool exit_decision(const UncertaintyRecord& record, const ExitPolicy& policy);

// One head per backbone layer, or a single head shared by every layer.
class UncertaintyHeads {
 public:
  UncertaintyHeads() = default;
  UncertaintyHeads(int depth, Index hidden_dim, Index embed_dim, bool shared, std::uint64_t seed);

  bool shared() const { return shared_; }
  int depth() const { return depth_; }
  const UemHead& for_layer(int layer) const;
  UemHead& for_layer(int layer);

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& h : heads_) h.for_each_parameter(f);
  }

 private:
  bool shared_ = false;
  int depth_ = 0;
  std::vector<UemHead> heads_;
};

}  // namespace eediff
