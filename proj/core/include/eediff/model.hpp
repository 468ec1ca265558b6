#pragma once

#include "eediff/backbone.hpp"
#include "eediff/losses.hpp"
#include "eediff/uem.hpp"

#include <cstdint>
#include <vector>

namespace eediff {

// Backbone plus its per-layer uncertainty heads.
struct EarlyExitModel {
  Denoiser backbone;
  UncertaintyHeads uem;

  EarlyExitModel() = default;
  EarlyExitModel(const BackboneConfig& config, bool share_uem, std::uint64_t seed);

  int depth() const { return backbone.depth(); }

  template <typename F>
  void for_each_parameter(F&& f) {
    backbone.for_each_parameter(f);
    uem.for_each_parameter(f);
  }
  std::vector<Parameter*> parameters();
  void zero_grad();
};

struct ObjectiveResult {
  LossComponents loss;
  std::vector<Matrix> u;           // per layer, B x tokens
  DetachedTargets detached;        // targets actually used
  std::vector<double> per_sample_simple;
};

// Evaluates the joint objective on one batch. With `backprop` set, parameter
// gradients are accumulated (not zeroed first). `frozen` pins the detached
// targets, which is what a finite-difference check of the analytic gradient
// needs.
ObjectiveResult evaluate_objective(EarlyExitModel& model, const Matrix& x_t,
                                   const std::vector<int>& timesteps, const Matrix& eps,
                                   const LossWeights& weights, bool backprop,
                                   const DetachedTargets* frozen = nullptr);

}  // namespace eediff
